#include "fbseg/inference.hpp"

#include <cmath>

#include "fbseg/evaluation.hpp"
#include "fbseg/sampling.hpp"

namespace fbseg {

void InferenceConfig::validate() const {
  if (patch_size < 1) throw ValidationError("inference.patch_size must be >= 1");
  if (!(stride_fraction > 0 && stride_fraction <= 1)) throw ValidationError("inference.stride_fraction must be in (0, 1]");
  if (!(threshold > 0 && threshold < 1)) throw ValidationError("inference.threshold must be in (0, 1)");
  if (min_component_area_px < 0) throw ValidationError("inference.min_component_area_px must be >= 0");
  if (gaussian_sigma_px < 0) throw ValidationError("inference.gaussian_sigma_px must be >= 0");
  if (connectivity != 4 && connectivity != 8) throw ValidationError("inference.connectivity must be 4 or 8");
}

int InferenceConfig::stride() const {
  return std::max(1, static_cast<int>(std::lround(stride_fraction * patch_size)));
}

std::vector<TilePosition> tile_positions(int height, int width, int patch_size, int stride) {
  if (patch_size < 1 || stride < 1) throw ValidationError("tile_positions: patch and stride must be >= 1");
  if (height < patch_size || width < patch_size) {
    throw ValidationError("tile_positions: image " + std::to_string(height) + "x" + std::to_string(width) +
                          " smaller than patch " + std::to_string(patch_size) + "; reflect-pad first");
  }
  auto axis = [&](int dim) {
    std::vector<int> pos;
    for (int p = 0; p + patch_size <= dim; p += stride) pos.push_back(p);
    if (pos.back() != dim - patch_size) pos.push_back(dim - patch_size);
    return pos;
  };
  const auto rows = axis(height), cols = axis(width);
  std::vector<TilePosition> out;
  out.reserve(rows.size() * cols.size());
  for (int r : rows)
    for (int c : cols) out.push_back({r, c});
  return out;
}

UNetTileModel::UNetTileModel(ModelState model) : model_(std::move(model)) {}

ImageF UNetTileModel::predict(const ImageF& tile) const {
  TensorF batch(1, 1, static_cast<int>(tile.rows()), static_cast<int>(tile.cols()));
  batch.set_channel_image(0, 0, tile);
  return predict_probabilities(model_, batch).channel_image(0, 0);
}

std::vector<std::unique_ptr<TileModel>> load_ensemble(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ValidationError("inference ensemble is empty");
  std::vector<std::unique_ptr<TileModel>> out;
  std::optional<UNetConfig> first;
  for (const auto& p : paths) {
    auto model = load_checkpoint(p);
    if (model.provenance.task != "segmentation") {
      throw ValidationError(p + ": not a segmentation checkpoint (task '" + model.provenance.task + "')");
    }
    if (first && !(model.config == *first)) throw ValidationError(p + ": checkpoint config differs from ensemble");
    first = model.config;
    out.push_back(std::make_unique<UNetTileModel>(std::move(model)));
  }
  return out;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

ImageF reflect_pad(const ImageF& image, int rows, int cols) {
  ImageF out(rows, cols);
  const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = image(reflect_index(r, h), reflect_index(c, w));
  return out;
}

ProbabilityMap predict_section(const InferenceConfig& cfg, std::span<const TileModel* const> ensemble,
                               const SectionImage& section) {
  cfg.validate();
  if (ensemble.empty()) throw ValidationError("inference ensemble is empty");
  const int h = static_cast<int>(section.pixels.rows()), w = static_cast<int>(section.pixels.cols());
  const int p = cfg.patch_size;
  const int ph = std::max(h, p), pw = std::max(w, p);
  const ImageF padded = (ph == h && pw == w) ? section.pixels : reflect_pad(section.pixels, ph, pw);

  // Tiles are visited in a fixed order and accumulated in double, so the
  // result does not depend on scheduling.
  ImageD sum = ImageD::Zero(ph, pw);
  Image<int> count = Image<int>::Zero(ph, pw);
  for (const auto& t : tile_positions(ph, pw, p, cfg.stride())) {
    const ImageF tile = zscore_normalize(padded.block(t.row, t.col, p, p));
    ImageD members = ImageD::Zero(p, p);
    for (const auto* m : ensemble) {
      const ImageF probs = m->predict(tile);
      require_same_shape(probs, tile, "tile model output");
      members += probs.cast<double>();
    }
    sum.block(t.row, t.col, p, p) += members / static_cast<double>(ensemble.size());
    count.block(t.row, t.col, p, p) += 1;
  }
  ProbabilityMap out;
  out.section_id = section.section_id;
  out.probs = (sum / count.cast<double>()).block(0, 0, h, w).cast<float>();
  return out;
}

ProbabilityMap predict_section(const InferenceConfig& cfg, const SectionImage& section) {
  const auto models = load_ensemble(cfg.ensemble);
  std::vector<const TileModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(m.get());
  return predict_section(cfg, ptrs, section);
}

ImageF gaussian_smooth(const ImageF& image, double sigma) {
  if (sigma <= 0) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double norm = 0;
  for (int i = -radius; i <= radius; ++i) norm += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= norm;

  const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
  ImageD tmp(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * image(r, reflect_index(c + i, w));
      tmp(r, c) = acc;
    }
  ImageF out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(reflect_index(r + i, h), c);
      out(r, c) = static_cast<float>(acc);
    }
  return out;
}

Mask remove_small_components(const Mask& mask, int min_area, int connectivity) {
  Mask out = Mask::Zero(mask.rows(), mask.cols());
  for (const auto& comp : connected_components(mask, connectivity)) {
    if (comp.pixel_count < min_area) continue;
    for (auto idx : comp.pixels) out.data()[idx] = 1;
  }
  return out;
}

Mask postprocess(const InferenceConfig& cfg, const ProbabilityMap& map) {
  cfg.validate();
  const ImageF smoothed = gaussian_smooth(map.probs, cfg.gaussian_sigma_px);
  const Mask binary = (smoothed > static_cast<float>(cfg.threshold)).cast<std::uint8_t>();
  return remove_small_components(binary, cfg.min_component_area_px, cfg.connectivity);
}

}  // namespace fbseg
