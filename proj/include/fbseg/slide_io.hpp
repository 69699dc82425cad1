#ifndef FBSEG_SLIDE_IO_HPP
#define FBSEG_SLIDE_IO_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fbseg/image.hpp"

namespace fbseg {

/// Annotation class codes stored in label masks.
enum class BundleClass : std::uint8_t { Background = 0, Dense = 1, Moderate = 2, Sparse = 3 };

inline constexpr int kNumBundleClasses = 3;

const char* class_name(BundleClass c);

/// One downsampled grayscale section.
struct SectionImage {
  std::string section_id;
  std::string brain_id;
  int section_index = 0;  // anterior to posterior
  ImageF pixels;
  double pixel_size_um = 1.6;
  int downsample_factor = 4;

  void validate() const;
};

/// Per-pixel class codes in {0, 1, 2, 3}.
struct LabelMask {
  std::string section_id;
  Mask labels;
};

/// 1 inside the annotated outline, 0 outside.
struct OutlineMask {
  std::string section_id;
  Mask inside;

  static OutlineMask all_inside(const std::string& id, Eigen::Index rows, Eigen::Index cols) {
    return {id, Mask::Ones(rows, cols)};
  }
};

enum class Split { Train, Test, Unlabeled };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string section_id;
  std::string brain_id;
  int section_index = 0;
  std::string image_path;
  std::optional<std::string> label_path;
  std::optional<std::string> outline_path;
  /// Terminal-field distractor mask; written by the synthetic generator only.
  std::optional<std::string> terminal_path;
  Split split = Split::Train;
  std::optional<int> fold;
  double pixel_size_um = 1.6;
  int downsample_factor = 4;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  /// Relative paths in entries resolve against this directory.
  std::filesystem::path root;

  std::filesystem::path resolve(const std::string& p) const;
  const ManifestEntry& find(const std::string& section_id) const;
  std::vector<const ManifestEntry*> with_split(Split s) const;
};

inline constexpr int kMaxFolds = 5;

/// Checks every manifest invariant; throws ValidationError naming the entry.
void validate_manifest(const DatasetManifest& manifest);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct LoadedSection {
  SectionImage image;
  std::optional<LabelMask> labels;
  std::optional<OutlineMask> outline;

  /// The outline, or an all-true mask when none was provided.
  OutlineMask outline_or_default() const;
};

enum class LabelPolicy { Load, Skip };

/// Loads a section and its optional masks. With LabelPolicy::Skip the label
/// file is never opened (reconstruction pre-training).
LoadedSection load_section(const DatasetManifest& manifest, const ManifestEntry& entry,
                           LabelPolicy policy = LabelPolicy::Load);

/// Writes pixels as 16-bit PNG/TIFF when every value is an integer in
/// [0, 65535], otherwise as 32-bit float TIFF. Reading back is bit-exact.
void save_section_image(const std::filesystem::path& path, const ImageF& pixels);
ImageF load_section_image(const std::filesystem::path& path);

/// Indexed PNG with a green/cyan/red palette for dense/moderate/sparse.
void save_label_mask(const std::filesystem::path& path, const Mask& labels);
Mask load_label_mask(const std::filesystem::path& path);
void save_outline_mask(const std::filesystem::path& path, const Mask& inside);
Mask load_outline_mask(const std::filesystem::path& path);

/// Throws ValidationError if any code is outside {0, 1, 2, 3}.
void validate_label_codes(const Mask& labels, const std::string& what);

/// Area downsampling: each output pixel is the mean of its factor x factor
/// block. Output dims are floor(input / factor); trailing rows/cols dropped.
template <typename Scalar>
Image<Scalar> downsample(const Image<Scalar>& image, int factor) {
  if (factor < 1) throw ValidationError("downsample: factor must be >= 1, got " + std::to_string(factor));
  if (image.rows() < factor || image.cols() < factor) {
    throw ValidationError("downsample: image smaller than factor " + std::to_string(factor));
  }
  if (factor == 1) return image;
  const Eigen::Index rows = image.rows() / factor, cols = image.cols() / factor;
  Image<Scalar> out(rows, cols);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      out(r, c) = static_cast<Scalar>(
          image.block(r * factor, c * factor, factor, factor).template cast<double>().sum() * inv);
  return out;
}

/// Label downsampling by per-block maximum class code, so thin annotations
/// survive and no absent code is introduced.
Mask downsample_labels(const Mask& labels, int factor);

}  // namespace fbseg

#endif  // FBSEG_SLIDE_IO_HPP
