#include "fbseg/slide_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "fbseg/image_codec.hpp"

namespace fbseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::array<std::uint8_t, 3>> kLabelPalette = {
    {0, 0, 0}, {0, 200, 0}, {0, 200, 200}, {220, 0, 0}};
const std::vector<std::array<std::uint8_t, 3>> kOutlinePalette = {{0, 0, 0}, {255, 255, 255}};

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

ManifestEntry parse_entry(const json& j, std::size_t index) {
  const std::string where = "manifest entry " + std::to_string(index);
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  static const std::set<std::string> known = {"section_id", "brain_id", "section_index", "image_path",
                                              "label_path", "outline_path", "terminal_path", "split",
                                              "fold", "pixel_size_um", "downsample_factor"};
  const std::string id = j.contains("section_id") && j["section_id"].is_string()
                             ? j["section_id"].get<std::string>()
                             : std::string{};
  const std::string name = id.empty() ? where : where + " (" + id + ")";
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ValidationError(name + ": unknown field '" + key + "'");
  }
  auto req_string = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string()) throw ValidationError(name + ": missing string field '" + key + "'");
    return j[key].get<std::string>();
  };
  auto opt_string = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) throw ValidationError(name + ": field '" + std::string(key) + "' must be a string");
    return j[key].get<std::string>();
  };

  ManifestEntry e;
  e.section_id = req_string("section_id");
  e.brain_id = req_string("brain_id");
  e.image_path = req_string("image_path");
  e.label_path = opt_string("label_path");
  e.outline_path = opt_string("outline_path");
  e.terminal_path = opt_string("terminal_path");
  try {
    e.split = parse_split(req_string("split"));
  } catch (const ValidationError& err) {
    throw ValidationError(name + ": " + err.what());
  }
  if (j.contains("section_index")) {
    if (!j["section_index"].is_number_integer()) throw ValidationError(name + ": section_index must be an integer");
    e.section_index = j["section_index"].get<int>();
  }
  if (j.contains("fold") && !j["fold"].is_null()) {
    if (!j["fold"].is_number_integer()) throw ValidationError(name + ": fold must be an integer");
    e.fold = j["fold"].get<int>();
  }
  if (j.contains("pixel_size_um")) {
    if (!j["pixel_size_um"].is_number()) throw ValidationError(name + ": pixel_size_um must be a number");
    e.pixel_size_um = j["pixel_size_um"].get<double>();
  }
  if (j.contains("downsample_factor")) {
    if (!j["downsample_factor"].is_number_integer()) throw ValidationError(name + ": downsample_factor must be an integer");
    e.downsample_factor = j["downsample_factor"].get<int>();
  }
  return e;
}

json entry_to_json(const ManifestEntry& e) {
  json j;
  j["section_id"] = e.section_id;
  j["brain_id"] = e.brain_id;
  j["section_index"] = e.section_index;
  j["image_path"] = e.image_path;
  if (e.label_path) j["label_path"] = *e.label_path;
  if (e.outline_path) j["outline_path"] = *e.outline_path;
  if (e.terminal_path) j["terminal_path"] = *e.terminal_path;
  j["split"] = split_name(e.split);
  if (e.fold) j["fold"] = *e.fold;
  j["pixel_size_um"] = e.pixel_size_um;
  j["downsample_factor"] = e.downsample_factor;
  return j;
}

}  // namespace

const char* class_name(BundleClass c) {
  switch (c) {
    case BundleClass::Background: return "background";
    case BundleClass::Dense: return "dense";
    case BundleClass::Moderate: return "moderate";
    case BundleClass::Sparse: return "sparse";
  }
  return "unknown";
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Unlabeled: return "unlabeled";
  }
  return "unknown";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "unlabeled") return Split::Unlabeled;
  throw ValidationError("unknown split '" + s + "' (expected train|test|unlabeled)");
}

void SectionImage::validate() const {
  if (pixels.rows() < 1 || pixels.cols() < 1) throw ValidationError(section_id + ": empty image");
  if (!(pixel_size_um > 0)) throw ValidationError(section_id + ": pixel_size_um must be > 0");
  if (downsample_factor < 1) throw ValidationError(section_id + ": downsample_factor must be >= 1");
}

fs::path DatasetManifest::resolve(const std::string& p) const {
  fs::path path(p);
  return path.is_absolute() ? path : root / path;
}

const ManifestEntry& DatasetManifest::find(const std::string& section_id) const {
  for (const auto& e : entries)
    if (e.section_id == section_id) return e;
  throw ValidationError("unknown section_id '" + section_id + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::with_split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

void validate_manifest(const DatasetManifest& manifest) {
  std::set<std::string> ids;
  for (const auto& e : manifest.entries) {
    const std::string name = "section '" + e.section_id + "'";
    if (e.section_id.empty()) throw ValidationError("manifest entry with empty section_id");
    if (!ids.insert(e.section_id).second) throw ValidationError("duplicate section_id '" + e.section_id + "'");
    if (e.image_path.empty()) throw ValidationError(name + ": empty image_path");
    if (e.split == Split::Train && !e.label_path) throw ValidationError(name + ": train entry requires label_path");
    if (e.split == Split::Unlabeled && e.label_path) throw ValidationError(name + ": unlabeled entry must not have label_path");
    if (e.fold) {
      if (e.split != Split::Train) throw ValidationError(name + ": fold may only be assigned to train entries");
      if (*e.fold < 0 || *e.fold >= kMaxFolds) throw ValidationError(name + ": fold must be in 0..4");
    }
    if (!(e.pixel_size_um > 0)) throw ValidationError(name + ": pixel_size_um must be > 0");
    if (e.downsample_factor < 1) throw ValidationError(name + ": downsample_factor must be >= 1");
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("manifest not found: " + path.string());
  std::ifstream f(path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& err) {
    throw ValidationError("manifest " + path.string() + ": " + err.what());
  }
  if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array()) {
    throw ValidationError("manifest " + path.string() + ": expected an object with an 'entries' array");
  }
  if (j.contains("version") && j["version"] != 1) throw ValidationError("manifest: unsupported version");
  DatasetManifest m;
  m.root = fs::absolute(path).parent_path();
  for (std::size_t i = 0; i < j["entries"].size(); ++i) m.entries.push_back(parse_entry(j["entries"][i], i));
  validate_manifest(m);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  validate_manifest(manifest);
  json j;
  j["format"] = "fbseg-manifest";
  j["version"] = 1;
  j["entries"] = json::array();
  for (const auto& e : manifest.entries) j["entries"].push_back(entry_to_json(e));
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

OutlineMask LoadedSection::outline_or_default() const {
  if (outline) return *outline;
  return OutlineMask::all_inside(image.section_id, image.pixels.rows(), image.pixels.cols());
}

void validate_label_codes(const Mask& labels, const std::string& what) {
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels.data()[i] > 3) {
      throw ValidationError(what + ": illegal class code " + std::to_string(labels.data()[i]) +
                            " (expected 0..3)");
    }
  }
}

LoadedSection load_section(const DatasetManifest& manifest, const ManifestEntry& entry, LabelPolicy policy) {
  LoadedSection out;
  out.image.section_id = entry.section_id;
  out.image.brain_id = entry.brain_id;
  out.image.section_index = entry.section_index;
  out.image.pixel_size_um = entry.pixel_size_um;
  out.image.downsample_factor = entry.downsample_factor;
  out.image.pixels = load_section_image(manifest.resolve(entry.image_path));
  out.image.validate();

  if (policy == LabelPolicy::Load && entry.label_path) {
    LabelMask lm{entry.section_id, load_label_mask(manifest.resolve(*entry.label_path))};
    require_same_shape(out.image.pixels, lm.labels, entry.section_id + " label mask");
    validate_label_codes(lm.labels, entry.section_id);
    out.labels = std::move(lm);
  }
  if (entry.outline_path) {
    OutlineMask om{entry.section_id, load_outline_mask(manifest.resolve(*entry.outline_path))};
    require_same_shape(out.image.pixels, om.inside, entry.section_id + " outline mask");
    out.outline = std::move(om);
  }
  return out;
}

void save_section_image(const fs::path& path, const ImageF& pixels) {
  const auto ext = lower_ext(path);
  const bool integral = (pixels >= 0.0f).all() && (pixels <= 65535.0f).all() && (pixels == pixels.round()).all();
  if (ext == ".png") {
    if (!integral) throw ValidationError(path.string() + ": PNG requires integer pixels in [0, 65535]");
    write_png_gray16(path, pixels.cast<std::uint16_t>());
  } else if (ext == ".tif" || ext == ".tiff") {
    if (integral) {
      write_tiff_gray16(path, pixels.cast<std::uint16_t>());
    } else {
      write_tiff_float(path, pixels);
    }
  } else {
    throw ValidationError(path.string() + ": unsupported image extension");
  }
}

ImageF load_section_image(const fs::path& path) { return read_gray_image(path).pixels; }

void save_label_mask(const fs::path& path, const Mask& labels) {
  validate_label_codes(labels, path.string());
  write_png_indexed(path, labels, kLabelPalette);
}

Mask load_label_mask(const fs::path& path) { return read_mask(path); }

void save_outline_mask(const fs::path& path, const Mask& inside) {
  write_png_indexed(path, (inside != 0).cast<std::uint8_t>(), kOutlinePalette);
}

Mask load_outline_mask(const fs::path& path) { return (read_mask(path) != 0).cast<std::uint8_t>(); }

Mask downsample_labels(const Mask& labels, int factor) {
  if (factor < 1) throw ValidationError("downsample_labels: factor must be >= 1, got " + std::to_string(factor));
  if (labels.rows() < factor || labels.cols() < factor) {
    throw ValidationError("downsample_labels: mask smaller than factor " + std::to_string(factor));
  }
  const Eigen::Index rows = labels.rows() / factor, cols = labels.cols() / factor;
  Mask out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = labels.block(r * factor, c * factor, factor, factor).maxCoeff();
  return out;
}

}  // namespace fbseg
