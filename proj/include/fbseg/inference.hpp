#ifndef FBSEG_INFERENCE_HPP
#define FBSEG_INFERENCE_HPP

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fbseg/image.hpp"
#include "fbseg/slide_io.hpp"
#include "fbseg/unet.hpp"

namespace fbseg {

struct ProbabilityMap {
  std::string section_id;
  ImageF probs;  // in [0, 1], section-sized
};

struct InferenceConfig {
  int patch_size = 1024;
  double stride_fraction = 0.25;
  std::vector<std::string> ensemble;  // checkpoint paths
  double gaussian_sigma_px = 2.0;
  double threshold = 0.5;
  int min_component_area_px = 50;
  int connectivity = 8;

  void validate() const;
  /// round(stride_fraction * patch_size), at least 1.
  int stride() const;
};

struct TilePosition {
  int row = 0;
  int col = 0;
  bool operator==(const TilePosition&) const = default;
};

/// Row-major grid {0, s, 2s, ...} per axis plus a final (dim - patch)
/// position when the stride does not land on it.
std::vector<TilePosition> tile_positions(int height, int width, int patch_size, int stride);

/// Anything that maps a z-scored square tile to per-pixel probabilities.
class TileModel {
 public:
  virtual ~TileModel() = default;
  virtual ImageF predict(const ImageF& tile) const = 0;
};

class UNetTileModel final : public TileModel {
 public:
  explicit UNetTileModel(ModelState model);
  ImageF predict(const ImageF& tile) const override;
  const ModelState& model() const { return model_; }

 private:
  ModelState model_;
};

/// Loads every checkpoint and checks they share one configuration.
std::vector<std::unique_ptr<TileModel>> load_ensemble(const std::vector<std::string>& paths);

/// Sliding-window prediction: each tile is z-scored, passed through every
/// member, and member probabilities are averaged; overlapping tiles are
/// averaged per pixel (sum / count). Sections smaller than the patch are
/// reflect-padded and cropped back.
ProbabilityMap predict_section(const InferenceConfig& cfg, std::span<const TileModel* const> ensemble,
                               const SectionImage& section);

/// Loads cfg.ensemble and runs predict_section.
ProbabilityMap predict_section(const InferenceConfig& cfg, const SectionImage& section);

/// Reflect-boundary index (edge sample repeated: d c b a | a b c d | d c b a).
int reflect_index(int i, int n);

/// Separable Gaussian smoothing with reflect boundaries; sigma <= 0 is a no-op.
ImageF gaussian_smooth(const ImageF& image, double sigma);

ImageF reflect_pad(const ImageF& image, int rows, int cols);

/// Drops connected components smaller than min_area.
Mask remove_small_components(const Mask& mask, int min_area, int connectivity = 8);

/// Smooth, threshold (p > threshold), remove small components.
Mask postprocess(const InferenceConfig& cfg, const ProbabilityMap& map);

}  // namespace fbseg

#endif  // FBSEG_INFERENCE_HPP
