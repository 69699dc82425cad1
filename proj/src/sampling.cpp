#include "fbseg/sampling.hpp"

#include <algorithm>
#include <array>

namespace fbseg {
namespace {

int clamp_origin(std::int64_t v, int dim, int patch) {
  return static_cast<int>(std::clamp<std::int64_t>(v, 0, dim - patch));
}

PatchSample extract(const SectionImage& section, const Mask& target, int row, int col, int patch) {
  PatchSample s;
  s.section_id = section.section_id;
  s.row = row;
  s.col = col;
  s.pixels = zscore_normalize(section.pixels.block(row, col, patch, patch));
  s.target = target.block(row, col, patch, patch);
  s.is_foreground = (s.target != 0).any();
  return s;
}

// Catmull-Rom weights for fractional offset t in [0, 1).
std::array<double, 4> cubic_weights(double t) {
  const double t2 = t * t, t3 = t2 * t;
  return {0.5 * (-t3 + 2 * t2 - t), 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (-3 * t3 + 4 * t2 + t), 0.5 * (t3 - t2)};
}

ImageF upsample_cubic(const ImageD& grid, int size) {
  const int g = static_cast<int>(grid.rows());
  // Control point k sits at pixel k * (size - 1) / (g - 1).
  const double scale = g > 1 ? static_cast<double>(g - 1) / std::max(size - 1, 1) : 0.0;
  auto sample_axis = [&](int p, std::array<int, 4>& idx) {
    const double x = p * scale;
    const int i = std::min(static_cast<int>(std::floor(x)), g - 1);
    for (int k = 0; k < 4; ++k) idx[k] = std::clamp(i - 1 + k, 0, g - 1);
    return cubic_weights(x - i);
  };
  ImageD rows_done(g, size);
  for (int c = 0; c < size; ++c) {
    std::array<int, 4> idx;
    const auto w = sample_axis(c, idx);
    for (int r = 0; r < g; ++r) {
      double v = 0;
      for (int k = 0; k < 4; ++k) v += w[k] * grid(r, idx[k]);
      rows_done(r, c) = v;
    }
  }
  ImageF out(size, size);
  for (int r = 0; r < size; ++r) {
    std::array<int, 4> idx;
    const auto w = sample_axis(r, idx);
    for (int c = 0; c < size; ++c) {
      double v = 0;
      for (int k = 0; k < 4; ++k) v += w[k] * rows_done(idx[k], c);
      out(r, c) = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace

void SamplerConfig::validate() const {
  if (patch_size < 16) throw ValidationError("sampler.patch_size must be >= 16");
  if (patches_per_section < 1) throw ValidationError("sampler.patches_per_section must be >= 1");
  if (!(foreground_fraction >= 0.0 && foreground_fraction <= 1.0)) {
    throw ValidationError("sampler.foreground_fraction must be in [0, 1]");
  }
  if (included_classes.empty()) throw ValidationError("sampler.included_classes must be non-empty");
  for (int c : included_classes)
    if (c < 1 || c > 3) throw ValidationError("sampler.included_classes must be a subset of {1, 2, 3}");
  if (augment.elastic.grid < 2) throw ValidationError("sampler.augment.elastic.grid must be >= 2");
  if (augment.elastic.max_displacement_px < 0) throw ValidationError("sampler.augment.elastic.max_displacement_px must be >= 0");
}

int SamplerConfig::guaranteed_foreground() const {
  // The epsilon keeps e.g. 0.5 * 20 from rounding up through representation error.
  return static_cast<int>(std::ceil(foreground_fraction * patches_per_section - 1e-9));
}

Mask binarize_labels(const Mask& labels, const ClassSet& classes) {
  if (classes.empty()) throw ValidationError("binarize_labels: empty class set");
  Mask out(labels.rows(), labels.cols());
  for (Eigen::Index i = 0; i < labels.size(); ++i) out.data()[i] = classes.count(labels.data()[i]) ? 1 : 0;
  return out;
}

std::vector<PatchSample> sample_patches(const SectionImage& section, const Mask& target, const SamplerConfig& cfg,
                                        Rng& rng, std::vector<std::string>* warnings) {
  cfg.validate();
  require_same_shape(section.pixels, target, "sample_patches " + section.section_id);
  const int rows = static_cast<int>(section.pixels.rows()), cols = static_cast<int>(section.pixels.cols());
  const int p = cfg.patch_size;
  if (rows < p || cols < p) {
    throw ValidationError("sample_patches: section " + section.section_id + " (" + std::to_string(rows) + "x" +
                          std::to_string(cols) + ") is smaller than patch_size " + std::to_string(p));
  }

  std::vector<Eigen::Index> positives;
  for (Eigen::Index i = 0; i < target.size(); ++i)
    if (target.data()[i]) positives.push_back(i);

  int n_fg = cfg.guaranteed_foreground();
  if (positives.empty()) {
    if (n_fg > 0 && warnings) warnings->push_back("section " + section.section_id + " has no foreground pixels");
    n_fg = 0;
  }

  std::vector<PatchSample> out;
  out.reserve(static_cast<std::size_t>(cfg.patches_per_section));
  for (int k = 0; k < cfg.patches_per_section; ++k) {
    int r0, c0;
    const bool guaranteed = k < n_fg;
    if (guaranteed) {
      const auto idx = positives[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(positives.size()) - 1))];
      const auto pr = idx / cols, pc = idx % cols;
      r0 = clamp_origin(pr - rng.uniform_int(0, p - 1), rows, p);
      c0 = clamp_origin(pc - rng.uniform_int(0, p - 1), cols, p);
    } else {
      r0 = static_cast<int>(rng.uniform_int(0, rows - p));
      c0 = static_cast<int>(rng.uniform_int(0, cols - p));
    }
    auto s = extract(section, target, r0, c0, p);
    s.guaranteed_foreground = guaranteed;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PatchSample> sample_uniform_patches(const SectionImage& section, int patch_size, int count, Rng& rng) {
  const int rows = static_cast<int>(section.pixels.rows()), cols = static_cast<int>(section.pixels.cols());
  if (rows < patch_size || cols < patch_size) {
    throw ValidationError("sample_uniform_patches: section " + section.section_id + " is smaller than patch_size");
  }
  const Mask empty = Mask::Zero(rows, cols);
  std::vector<PatchSample> out;
  for (int k = 0; k < count; ++k) {
    const int r0 = static_cast<int>(rng.uniform_int(0, rows - patch_size));
    const int c0 = static_cast<int>(rng.uniform_int(0, cols - patch_size));
    out.push_back(extract(section, empty, r0, c0, patch_size));
  }
  return out;
}

DisplacementField make_elastic_field(int size, const ElasticConfig& cfg, Rng& rng) {
  ImageD gr(cfg.grid, cfg.grid), gc(cfg.grid, cfg.grid);
  for (int i = 0; i < cfg.grid; ++i)
    for (int j = 0; j < cfg.grid; ++j) {
      gr(i, j) = rng.uniform(-cfg.max_displacement_px, cfg.max_displacement_px);
      gc(i, j) = rng.uniform(-cfg.max_displacement_px, cfg.max_displacement_px);
    }
  return {upsample_cubic(gr, size), upsample_cubic(gc, size)};
}

PatchSample apply_displacement(const PatchSample& sample, const DisplacementField& field) {
  const int rows = static_cast<int>(sample.pixels.rows()), cols = static_cast<int>(sample.pixels.cols());
  require_same_shape(sample.pixels, field.dr, "apply_displacement");
  PatchSample out = sample;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double sr = std::clamp(r + static_cast<double>(field.dr(r, c)), 0.0, rows - 1.0);
      const double sc = std::clamp(c + static_cast<double>(field.dc(r, c)), 0.0, cols - 1.0);
      const int r0 = std::min(static_cast<int>(sr), rows - 1), c0 = std::min(static_cast<int>(sc), cols - 1);
      const int r1 = std::min(r0 + 1, rows - 1), c1 = std::min(c0 + 1, cols - 1);
      const double fr = sr - r0, fc = sc - c0;
      const double v = (1 - fr) * ((1 - fc) * sample.pixels(r0, c0) + fc * sample.pixels(r0, c1)) +
                       fr * ((1 - fc) * sample.pixels(r1, c0) + fc * sample.pixels(r1, c1));
      out.pixels(r, c) = static_cast<float>(v);
      out.target(r, c) = sample.target(static_cast<int>(std::lround(sr)), static_cast<int>(std::lround(sc)));
    }
  }
  out.is_foreground = (out.target != 0).any();
  return out;
}

PatchSample flip_horizontal(PatchSample sample) {
  sample.pixels = sample.pixels.rowwise().reverse().eval();
  sample.target = sample.target.rowwise().reverse().eval();
  return sample;
}

PatchSample flip_vertical(PatchSample sample) {
  sample.pixels = sample.pixels.colwise().reverse().eval();
  sample.target = sample.target.colwise().reverse().eval();
  return sample;
}

PatchSample augment(PatchSample sample, const AugmentConfig& cfg, Rng& rng) {
  // Draw every decision up front so the stream consumption is fixed.
  const bool hflip = rng.bernoulli(cfg.hflip_probability);
  const bool vflip = rng.bernoulli(cfg.vflip_probability);
  const bool elastic = rng.bernoulli(cfg.elastic.probability);
  if (hflip) sample = flip_horizontal(std::move(sample));
  if (vflip) sample = flip_vertical(std::move(sample));
  if (elastic) {
    const auto field = make_elastic_field(static_cast<int>(sample.pixels.rows()), cfg.elastic, rng);
    sample = apply_displacement(sample, field);
  }
  return sample;
}

}  // namespace fbseg
