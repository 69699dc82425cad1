#ifndef FBSEG_SYNTHGEN_HPP
#define FBSEG_SYNTHGEN_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "fbseg/image.hpp"
#include "fbseg/slide_io.hpp"

namespace fbseg {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// Per-class values, indexed dense, moderate, sparse.
template <typename T>
using PerClass = std::array<T, kNumBundleClasses>;

struct SynthSpec {
  int height = 512;
  int width = 512;
  PerClass<int> n_bundles = {2, 2, 2};
  int n_terminal_fields = 2;
  double noise_mean = 1000.0;
  double noise_std = 150.0;

  PerClass<Range> width_px = {Range{14, 20}, Range{10, 16}, Range{8, 12}};
  /// Fraction of the envelope covered by bright streaks.
  PerClass<double> streak_density = {0.45, 0.25, 0.10};
  Range length_px = {140, 260};
  Range outside_length_px = {50, 90};
  Range curvature = {-0.008, 0.008};  // rad per px
  Range streak_length_px = {6, 16};
  double streak_intensity = 2500.0;

  Range terminal_radius_px = {18, 30};
  double terminal_intensity = 1500.0;

  double outline_coverage = 0.6;
  /// Share of bundles placed fully outside the outline (at least one when
  /// there are two or more bundles).
  double outside_fraction = 0.2;

  std::uint64_t seed = 0;

  void validate() const;
  int total_bundles() const { return n_bundles[0] + n_bundles[1] + n_bundles[2]; }
  int outside_bundles() const;
};

struct SynthSection {
  SectionImage image;
  LabelMask labels;
  OutlineMask outline;
  Mask terminals;  // 1 inside terminal-field blobs; label there is 0
  /// Per bundle: class code and whether it was placed outside the outline.
  std::vector<std::pair<BundleClass, bool>> bundles;
};

SynthSection generate_section(const SynthSpec& spec, const std::string& section_id = "synth");

struct SplitCounts {
  int train = 0;
  int test = 0;
  int unlabeled = 0;
};

struct SynthDatasetConfig {
  SynthSpec spec;
  int n_sections = 10;
  /// Defaults to 60% train, 20% test, rest unlabeled.
  std::optional<SplitCounts> splits;
  /// When set, train sections carry manifest folds dealt round-robin.
  std::optional<int> folds;
  std::uint64_t seed = 0;

  void validate() const;
  SplitCounts resolved_splits() const;
};

/// Writes images/, labels/, outlines/, terminals/ and manifest.json under
/// out_dir. Unlabeled sections get no masks. Section i uses a seed derived
/// from (seed, i), so regeneration is bit-identical.
DatasetManifest generate_dataset(const SynthDatasetConfig& cfg, const std::filesystem::path& out_dir);

/// Mean fraction of pixels above noise_mean + 2 noise_std inside each
/// class-c component's envelope; nullopt if the class is absent.
std::optional<double> measured_streak_density(const SynthSpec& spec, const SynthSection& s, BundleClass c);

}  // namespace fbseg

#endif  // FBSEG_SYNTHGEN_HPP
