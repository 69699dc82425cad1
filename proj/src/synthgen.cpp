#include "fbseg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "fbseg/evaluation.hpp"
#include "fbseg/image_codec.hpp"
#include "fbseg/rng.hpp"

namespace fbseg {
namespace {

constexpr int kMaxAttempts = 4000;
constexpr int kSeparationPx = 6;

void check_range(const Range& r, const std::string& name, double min_lo) {
  if (!(r.lo >= min_lo && r.hi >= r.lo)) throw ValidationError("synth." + name + " must satisfy " +
                                                                std::to_string(min_lo) + " <= lo <= hi");
}

struct Ellipse {
  double cy, cx, a_row, a_col;
  double rho(double r, double c) const {
    const double dy = (r - cy) / a_row, dx = (c - cx) / a_col;
    return std::sqrt(dy * dy + dx * dx);
  }
};

Ellipse make_outline(const SynthSpec& spec, Rng& rng) {
  const double h = spec.height, w = spec.width;
  const double area = spec.outline_coverage * h * w;
  double a_row = 0.47 * h;
  double a_col = area / (std::numbers::pi * a_row);
  if (a_col > 0.47 * w) {
    a_col = 0.47 * w;
    a_row = std::min(0.49 * h, area / (std::numbers::pi * a_col));
  }
  // One hemisphere: the ellipse hugs one side, leaving a strip of
  // contralateral tissue on the other.
  const double margin = 0.03 * w;
  const double cx = rng.bernoulli(0.5) ? a_col + margin : w - a_col - margin;
  return {h / 2.0, cx, a_row, a_col};
}

struct Curve {
  std::vector<double> r, c, tr, tc;  // points and unit tangents, 1 px apart
};

Curve random_curve(const SynthSpec& spec, double length, Rng& rng) {
  Curve k;
  double r = rng.uniform(0, spec.height), c = rng.uniform(0, spec.width);
  double heading = rng.uniform(0, 2 * std::numbers::pi);
  double kappa = rng.uniform(spec.curvature.lo, spec.curvature.hi);
  const int n = static_cast<int>(std::lround(length));
  for (int i = 0; i < n; ++i) {
    k.r.push_back(r);
    k.c.push_back(c);
    k.tr.push_back(std::sin(heading));
    k.tc.push_back(std::cos(heading));
    kappa = std::clamp(kappa + rng.normal() * 5e-4, spec.curvature.lo, spec.curvature.hi);
    heading += kappa;
    r += std::sin(heading);
    c += std::cos(heading);
  }
  return k;
}

// Pixels within half_width of the curve, as linear indices; empty if the
// envelope leaves the canvas.
std::vector<Eigen::Index> envelope(const SynthSpec& spec, const Curve& k, double half_width) {
  const int h = spec.height, w = spec.width;
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(h) * w, 0);
  std::vector<Eigen::Index> out;
  const int rad = static_cast<int>(std::ceil(half_width));
  for (std::size_t i = 0; i < k.r.size(); ++i) {
    const int r0 = static_cast<int>(std::lround(k.r[i])), c0 = static_cast<int>(std::lround(k.c[i]));
    if (r0 - rad < 2 || c0 - rad < 2 || r0 + rad >= h - 2 || c0 + rad >= w - 2) return {};
    for (int dr = -rad; dr <= rad; ++dr)
      for (int dc = -rad; dc <= rad; ++dc) {
        const double dy = r0 + dr - k.r[i], dx = c0 + dc - k.c[i];
        if (dy * dy + dx * dx > half_width * half_width) continue;
        const Eigen::Index idx = static_cast<Eigen::Index>(r0 + dr) * w + (c0 + dc);
        if (!hit[idx]) {
          hit[idx] = 1;
          out.push_back(idx);
        }
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void dilate_into(Mask& occupied, const std::vector<Eigen::Index>& pixels, int radius) {
  const int h = static_cast<int>(occupied.rows()), w = static_cast<int>(occupied.cols());
  for (auto idx : pixels) {
    const int r = static_cast<int>(idx / w), c = static_cast<int>(idx % w);
    for (int dr = -radius; dr <= radius; ++dr)
      for (int dc = -radius; dc <= radius; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr >= 0 && rr < h && cc >= 0 && cc < w) occupied(rr, cc) = 1;
      }
  }
}

}  // namespace

void SynthSpec::validate() const {
  if (height < 256 || width < 256) throw ValidationError("synth.canvas dims must be >= 256");
  for (int i = 0; i < kNumBundleClasses; ++i) {
    if (n_bundles[i] < 0) throw ValidationError("synth.n_bundles_per_class must be >= 0");
    check_range(width_px[i], std::string("bundle_geometry.width_px.") + class_name(static_cast<BundleClass>(i + 1)), 1.0);
    if (!(streak_density[i] > 0 && streak_density[i] < 1))
      throw ValidationError("synth.bundle_geometry.streak_density must be in (0, 1)");
  }
  if (!(streak_density[0] > streak_density[1] && streak_density[1] > streak_density[2]))
    throw ValidationError("synth.bundle_geometry.streak_density must be ordered dense > moderate > sparse");
  if (n_terminal_fields < 0) throw ValidationError("synth.n_terminal_fields must be >= 0");
  if (!(noise_std >= 0)) throw ValidationError("synth.background_noise.std must be >= 0");
  check_range(length_px, "bundle_geometry.length_px", 2.0);
  check_range(outside_length_px, "bundle_geometry.outside_length_px", 2.0);
  if (!(curvature.hi >= curvature.lo)) throw ValidationError("synth.bundle_geometry.curvature must satisfy lo <= hi");
  check_range(streak_length_px, "bundle_geometry.streak_length_px", 1.0);
  check_range(terminal_radius_px, "terminal_fields.radius_px", 1.0);
  if (!(streak_intensity > 0)) throw ValidationError("synth.bundle_geometry.streak_intensity must be > 0");
  if (!(terminal_intensity >= 0)) throw ValidationError("synth.terminal_fields.intensity must be >= 0");
  if (!(outline_coverage > 0.2 && outline_coverage < 0.9)) throw ValidationError("synth.outline.coverage must be in (0.2, 0.9)");
  if (!(outside_fraction >= 0 && outside_fraction < 1)) throw ValidationError("synth.outline.outside_fraction must be in [0, 1)");
}

int SynthSpec::outside_bundles() const {
  const int n = total_bundles();
  if (n < 2 || outside_fraction <= 0) return 0;
  return std::max(1, static_cast<int>(std::lround(outside_fraction * n)));
}

SynthSection generate_section(const SynthSpec& spec, const std::string& section_id) {
  spec.validate();
  const int h = spec.height, w = spec.width;
  Rng rng(spec.seed);
  const Ellipse outline = make_outline(spec, rng);
  const double margin = kSeparationPx / std::min(outline.a_row, outline.a_col);

  SynthSection out;
  out.image.section_id = section_id;
  out.labels = {section_id, Mask::Zero(h, w)};
  out.outline = {section_id, Mask::Zero(h, w)};
  out.terminals = Mask::Zero(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.outline.inside(r, c) = outline.rho(r, c) <= 1.0 ? 1 : 0;

  std::vector<BundleClass> classes;
  for (int i = 0; i < kNumBundleClasses; ++i)
    for (int j = 0; j < spec.n_bundles[i]; ++j) classes.push_back(static_cast<BundleClass>(i + 1));
  rng.shuffle(classes);
  const int n_outside = spec.outside_bundles();

  Mask occupied = Mask::Zero(h, w);
  ImageF streaks = ImageF::Zero(h, w);
  for (std::size_t b = 0; b < classes.size(); ++b) {
    const int ci = static_cast<int>(classes[b]) - 1;
    const bool outside = static_cast<int>(b) < n_outside;  // placed first: the strip is the tight spot
    const Range& len = outside ? spec.outside_length_px : spec.length_px;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const double half = 0.5 * rng.uniform(spec.width_px[ci].lo, spec.width_px[ci].hi);
      const Curve k = random_curve(spec, rng.uniform(len.lo, len.hi), rng);
      const auto env = envelope(spec, k, half);
      if (env.empty()) continue;
      const bool ok = std::all_of(env.begin(), env.end(), [&](Eigen::Index idx) {
        const double rho = outline.rho(static_cast<double>(idx / w), static_cast<double>(idx % w));
        const bool side = outside ? rho >= 1.0 + margin : rho <= 1.0 - margin;
        return side && !occupied.data()[idx];
      });
      if (!ok) continue;

      std::vector<std::uint8_t> in_env(static_cast<std::size_t>(h) * w, 0);
      for (auto idx : env) {
        in_env[idx] = 1;
        out.labels.labels.data()[idx] = static_cast<std::uint8_t>(classes[b]);
      }
      // Short bright segments roughly parallel to the local course, until
      // the target share of the envelope is lit.
      const auto target = static_cast<std::size_t>(std::ceil(spec.streak_density[ci] * env.size()));
      std::size_t lit = 0;
      for (int guard = 0; lit < target && guard < 200000; ++guard) {
        const auto t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k.r.size()) - 1));
        const double u = rng.uniform(-half, half);
        double r = k.r[t] - u * k.tc[t], c = k.c[t] + u * k.tr[t];
        const double angle = std::atan2(k.tr[t], k.tc[t]) + 0.12 * rng.normal();
        const double dr = 0.5 * std::sin(angle), dc = 0.5 * std::cos(angle);
        const double value = spec.streak_intensity * rng.uniform(0.6, 1.2);
        const int steps = static_cast<int>(2 * rng.uniform(spec.streak_length_px.lo, spec.streak_length_px.hi));
        for (int s = 0; s < steps; ++s, r += dr, c += dc) {
          const int ri = static_cast<int>(std::lround(r)), cc = static_cast<int>(std::lround(c));
          if (ri < 0 || ri >= h || cc < 0 || cc >= w) break;
          const Eigen::Index idx = static_cast<Eigen::Index>(ri) * w + cc;
          if (!in_env[idx]) continue;
          if (streaks.data()[idx] == 0) ++lit;
          streaks.data()[idx] = std::max(streaks.data()[idx], static_cast<float>(value));
        }
      }
      dilate_into(occupied, env, kSeparationPx);
      out.bundles.emplace_back(classes[b], outside);
      placed = true;
    }
    if (!placed) throw std::runtime_error("synth: could not place bundle " + std::to_string(b) + " in " + section_id);
  }

  // Terminal fields: diffuse glow plus punctate dots, inside the outline and
  // clear of every bundle.
  ImageF glow = ImageF::Zero(h, w);
  for (int t = 0; t < spec.n_terminal_fields; ++t) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const double radius = rng.uniform(spec.terminal_radius_px.lo, spec.terminal_radius_px.hi);
      const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
      const int rad = static_cast<int>(std::ceil(radius));
      if (cy - rad < 2 || cx - rad < 2 || cy + rad >= h - 2 || cx + rad >= w - 2) continue;
      std::vector<Eigen::Index> disk;
      for (int r = static_cast<int>(cy) - rad; r <= static_cast<int>(cy) + rad; ++r)
        for (int c = static_cast<int>(cx) - rad; c <= static_cast<int>(cx) + rad; ++c)
          if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= radius * radius)
            disk.push_back(static_cast<Eigen::Index>(r) * w + c);
      const bool ok = std::all_of(disk.begin(), disk.end(), [&](Eigen::Index idx) {
        return !occupied.data()[idx] && outline.rho(static_cast<double>(idx / w), static_cast<double>(idx % w)) <= 1.0 - margin;
      });
      if (!ok) continue;
      const double sigma = radius / 2.0;
      for (auto idx : disk) {
        const double r = static_cast<double>(idx / w), c = static_cast<double>(idx % w);
        const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
        const double fall = std::exp(-d2 / (2 * sigma * sigma));
        glow.data()[idx] += static_cast<float>(spec.terminal_intensity * fall);
        if (rng.bernoulli(0.15 * fall)) glow.data()[idx] += static_cast<float>(spec.streak_intensity * rng.uniform(0.6, 1.2));
        out.terminals.data()[idx] = 1;
      }
      dilate_into(occupied, disk, kSeparationPx);
      placed = true;
    }
    if (!placed) throw std::runtime_error("synth: could not place terminal field " + std::to_string(t) + " in " + section_id);
  }

  out.image.pixels.resize(h, w);
  for (Eigen::Index i = 0; i < out.image.pixels.size(); ++i) {
    const double v = spec.noise_mean + spec.noise_std * rng.normal() + streaks.data()[i] + glow.data()[i];
    out.image.pixels.data()[i] = static_cast<float>(std::clamp(std::round(v), 0.0, 65535.0));
  }
  return out;
}

void SynthDatasetConfig::validate() const {
  spec.validate();
  if (n_sections < 1) throw ValidationError("synth.n_sections must be >= 1");
  const auto s = resolved_splits();
  if (s.train < 0 || s.test < 0 || s.unlabeled < 0 || s.train + s.test + s.unlabeled != n_sections)
    throw ValidationError("synth.splits must be non-negative and sum to n_sections");
  if (folds && (*folds < 1 || *folds > kMaxFolds)) throw ValidationError("synth.folds must be in [1, 5]");
}

SplitCounts SynthDatasetConfig::resolved_splits() const {
  if (splits) return *splits;
  SplitCounts s;
  s.train = static_cast<int>(std::lround(0.6 * n_sections));
  s.test = static_cast<int>(std::lround(0.2 * n_sections));
  s.unlabeled = n_sections - s.train - s.test;
  return s;
}

DatasetManifest generate_dataset(const SynthDatasetConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  for (const char* sub : {"images", "labels", "outlines", "terminals"}) fs::create_directories(out_dir / sub);
  const auto splits = cfg.resolved_splits();

  DatasetManifest manifest;
  manifest.root = out_dir;
  int train_seen = 0;
  for (int i = 0; i < cfg.n_sections; ++i) {
    const std::string brain = i % 2 == 0 ? "S1" : "S2";
    char id[32];
    std::snprintf(id, sizeof id, "%s_s%03d", brain.c_str(), i / 2);
    SynthSpec spec = cfg.spec;
    spec.seed = derive_seed(cfg.seed, "synth-section", static_cast<std::uint64_t>(i));
    auto s = generate_section(spec, id);

    ManifestEntry e;
    e.section_id = id;
    e.brain_id = brain;
    e.section_index = i / 2;
    e.split = i < splits.train ? Split::Train : i < splits.train + splits.test ? Split::Test : Split::Unlabeled;
    e.image_path = "images/" + std::string(id) + ".png";
    save_section_image(out_dir / e.image_path, s.image.pixels);
    if (e.split != Split::Unlabeled) {
      e.label_path = "labels/" + std::string(id) + "_labels.png";
      e.outline_path = "outlines/" + std::string(id) + "_outline.png";
      e.terminal_path = "terminals/" + std::string(id) + "_terminals.png";
      save_label_mask(out_dir / *e.label_path, s.labels.labels);
      save_outline_mask(out_dir / *e.outline_path, s.outline.inside);
      write_png_gray8(out_dir / *e.terminal_path, s.terminals);
    }
    if (e.split == Split::Train && cfg.folds) e.fold = train_seen++ % *cfg.folds;
    manifest.entries.push_back(std::move(e));
  }
  validate_manifest(manifest);
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

std::optional<double> measured_streak_density(const SynthSpec& spec, const SynthSection& s, BundleClass c) {
  const Mask of_class = (s.labels.labels == static_cast<std::uint8_t>(c)).cast<std::uint8_t>();
  const auto comps = connected_components(of_class, 8);
  if (comps.empty()) return std::nullopt;
  const float bright = static_cast<float>(spec.noise_mean + 2 * spec.noise_std);
  double acc = 0.0;
  for (const auto& comp : comps) {
    int n = 0;
    for (auto idx : comp.pixels) n += s.image.pixels.data()[idx] > bright;
    acc += static_cast<double>(n) / comp.pixel_count;
  }
  return acc / static_cast<double>(comps.size());
}

}  // namespace fbseg
