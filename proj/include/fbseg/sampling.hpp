#ifndef FBSEG_SAMPLING_HPP
#define FBSEG_SAMPLING_HPP

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fbseg/image.hpp"
#include "fbseg/rng.hpp"
#include "fbseg/slide_io.hpp"

namespace fbseg {

using ClassSet = std::set<int>;

struct ElasticConfig {
  double probability = 0.5;
  int grid = 8;                       // control points per axis
  double max_displacement_px = 20.0;  // per-control displacement ~ U[-max, +max]
};

struct AugmentConfig {
  double hflip_probability = 0.5;
  double vflip_probability = 0.5;
  ElasticConfig elastic;
};

struct SamplerConfig {
  int patch_size = 1024;
  int patches_per_section = 20;
  double foreground_fraction = 0.5;
  ClassSet included_classes = {1, 2, 3};
  AugmentConfig augment;

  void validate() const;
  /// Number of foreground-guaranteed patches per section: ceil(fraction * n).
  int guaranteed_foreground() const;
};

struct PatchSample {
  ImageF pixels;  // z-scored
  Mask target;    // {0, 1}
  std::string section_id;
  int row = 0;  // top-left corner in the source section
  int col = 0;
  bool is_foreground = false;
  /// Placed around a positive pixel by construction.
  bool guaranteed_foreground = false;
};

/// Pixel is 1 iff its class code is in `classes`.
Mask binarize_labels(const Mask& labels, const ClassSet& classes);

inline constexpr double kZscoreEpsilon = 1e-8;

/// (x - mean) / max(std, 1e-8) with the population standard deviation.
template <typename Derived>
typename Derived::PlainObject zscore_normalize(const Eigen::ArrayBase<Derived>& patch) {
  using Scalar = typename Derived::Scalar;
  if (patch.size() == 0) throw ValidationError("zscore_normalize: empty patch");
  const double n = static_cast<double>(patch.size());
  const double mean = patch.template cast<double>().sum() / n;
  const double var = (patch.template cast<double>() - mean).square().sum() / n;
  const double denom = std::max(std::sqrt(var), kZscoreEpsilon);
  return ((patch.template cast<double>() - mean) / denom).template cast<Scalar>();
}

/// Draws cfg.patches_per_section patches. The first guaranteed_foreground()
/// are placed around a uniformly drawn positive pixel (clamped to bounds);
/// the rest are uniform. With no positive pixels every draw is uniform and a
/// warning is appended.
std::vector<PatchSample> sample_patches(const SectionImage& section, const Mask& target, const SamplerConfig& cfg,
                                        Rng& rng, std::vector<std::string>* warnings = nullptr);

/// Uniformly placed patches without targets (reconstruction pre-training).
std::vector<PatchSample> sample_uniform_patches(const SectionImage& section, int patch_size, int count, Rng& rng);

/// Dense per-pixel displacement (rows, cols offsets) for one patch.
struct DisplacementField {
  ImageF dr;
  ImageF dc;

  static DisplacementField zero(int size) { return {ImageF::Zero(size, size), ImageF::Zero(size, size)}; }
};

/// Random control grid with displacements ~ U[-max, +max], upsampled with
/// separable cubic interpolation.
DisplacementField make_elastic_field(int size, const ElasticConfig& cfg, Rng& rng);

/// Resamples pixels bilinearly and target by nearest neighbour at
/// (r + dr, c + dc), clamping to the patch border.
PatchSample apply_displacement(const PatchSample& sample, const DisplacementField& field);

PatchSample flip_horizontal(PatchSample sample);
PatchSample flip_vertical(PatchSample sample);

/// Random flips (p = 0.5 each) and, with probability 0.5, an elastic warp,
/// applied identically to pixels and target.
PatchSample augment(PatchSample sample, const AugmentConfig& cfg, Rng& rng);

}  // namespace fbseg

#endif  // FBSEG_SAMPLING_HPP
