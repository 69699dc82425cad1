#include <doctest.h>

#include <cmath>

#include "fbseg/sampling.hpp"
#include "test_util.hpp"

using namespace fbseg;

namespace {

SectionImage noise_section(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  SectionImage s;
  s.section_id = "s";
  s.pixels.resize(h, w);
  for (Eigen::Index i = 0; i < s.pixels.size(); ++i) s.pixels.data()[i] = static_cast<float>(rng.normal(100, 10));
  return s;
}

SamplerConfig small_sampler(int patch, int n, double fg) {
  SamplerConfig cfg;
  cfg.patch_size = patch;
  cfg.patches_per_section = n;
  cfg.foreground_fraction = fg;
  return cfg;
}

}  // namespace

TEST_CASE("binarize_labels") {
  const Mask m = test::mask_from({{0, 1}, {2, 3}});
  CHECK((binarize_labels(m, {1, 2}) == test::mask_from({{0, 1}, {1, 0}})).all());
  CHECK((binarize_labels(m, {1, 2, 3}) == test::mask_from({{0, 1}, {1, 1}})).all());
  CHECK_THROWS_AS(binarize_labels(m, {}), ValidationError);
}

TEST_CASE("zscore_normalize") {
  Eigen::ArrayXXd a(1, 2);
  a << 1, 3;
  const auto z = zscore_normalize(a);
  CHECK(z(0, 0) == doctest::Approx(-1));
  CHECK(z(0, 1) == doctest::Approx(1));

  CHECK((zscore_normalize(Eigen::ArrayXXd::Constant(3, 3, 7.0)) == 0).all());

  Eigen::ArrayXXd b(1, 3);
  b << 0, 2, 4;
  const double sd = std::sqrt(((0 - 2.0) * (0 - 2.0) + 0 + (4 - 2.0) * (4 - 2.0)) / 3);  // population
  const auto zb = zscore_normalize(b);
  CHECK(zb(0, 0) == doctest::Approx(-2 / sd));
  CHECK(zb(0, 1) == doctest::Approx(0));
  CHECK(zb(0, 2) == doctest::Approx(2 / sd));
  CHECK(2 / sd == doctest::Approx(1.2247).epsilon(1e-4));
}

TEST_CASE("sample_patches guarantees half foreground") {
  const auto s = noise_section(128, 128, 1);
  Mask target = Mask::Zero(128, 128);
  target.block(40, 70, 5, 9).setOnes();
  Rng rng(2);
  const auto cfg = small_sampler(32, 20, 0.5);
  CHECK(cfg.guaranteed_foreground() == 10);
  for (int draw = 0; draw < 20; ++draw) {
    const auto patches = sample_patches(s, target, cfg, rng);
    REQUIRE(patches.size() == 20);
    int fg = 0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const auto& p = patches[i];
      CHECK(p.pixels.rows() == 32);
      CHECK(p.is_foreground == (p.target.maxCoeff() > 0));
      CHECK(p.guaranteed_foreground == (i < 10));
      if (p.guaranteed_foreground) CHECK(p.is_foreground);
      CHECK(p.row >= 0);
      CHECK(p.row + 32 <= 128);
      fg += p.is_foreground;
      // z-scored per patch
      CHECK(std::abs(p.pixels.cast<double>().mean()) < 1e-4);
    }
    CHECK(fg >= 10);
  }
}

TEST_CASE("single positive pixel: every guaranteed patch contains it") {
  const auto s = noise_section(64, 64, 3);
  Mask target = Mask::Zero(64, 64);
  target(10, 10) = 1;
  Rng rng(4);
  const auto patches = sample_patches(s, target, small_sampler(16, 4, 1.0), rng);
  REQUIRE(patches.size() == 4);
  for (const auto& p : patches) {
    CHECK(p.row <= 10);
    CHECK(p.row + 16 > 10);
    CHECK(p.col <= 10);
    CHECK(p.col + 16 > 10);
    CHECK(p.target(10 - p.row, 10 - p.col) == 1);
  }
}

TEST_CASE("foreground fraction over 1000 patches") {
  // One positive pixel, so chance hits in the uniform half are rare and the
  // fraction sits just above one half.
  const auto s = noise_section(256, 256, 5);
  Mask target = Mask::Zero(256, 256);
  target(200, 31) = 1;
  Rng rng(6);
  const auto cfg = small_sampler(16, 20, 0.5);
  int fg = 0, total = 0;
  for (int draw = 0; draw < 50; ++draw)
    for (const auto& p : sample_patches(s, target, cfg, rng)) {
      fg += p.is_foreground;
      ++total;
    }
  REQUIRE(total == 1000);
  const double frac = static_cast<double>(fg) / total;
  CHECK(frac >= 0.45);
  CHECK(frac <= 0.55);
}

TEST_CASE("no foreground: all background plus a warning") {
  const auto s = noise_section(64, 64, 7);
  Rng rng(8);
  std::vector<std::string> warnings;
  const auto patches = sample_patches(s, Mask::Zero(64, 64), small_sampler(16, 20, 0.5), rng, &warnings);
  CHECK(patches.size() == 20);
  for (const auto& p : patches) CHECK_FALSE(p.is_foreground);
  CHECK(warnings.size() == 1);
}

TEST_CASE("sampling errors and determinism") {
  const auto s = noise_section(64, 64, 9);
  Mask t = Mask::Zero(64, 64);
  t(5, 5) = 1;
  Rng rng(1);
  CHECK_THROWS_AS(sample_patches(s, t, small_sampler(128, 2, 0.5), rng), ValidationError);
  CHECK_THROWS_AS(small_sampler(8, 2, 0.5).validate(), ValidationError);
  CHECK_THROWS_AS(small_sampler(16, 2, 1.5).validate(), ValidationError);

  Rng a(42), b(42);
  const auto pa = sample_patches(s, t, small_sampler(16, 6, 0.5), a);
  const auto pb = sample_patches(s, t, small_sampler(16, 6, 0.5), b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].row == pb[i].row);
    CHECK(pa[i].col == pb[i].col);
    CHECK((pa[i].pixels == pb[i].pixels).all());
  }
}

TEST_CASE("flips and identity displacement") {
  PatchSample p;
  p.pixels.resize(2, 2);
  p.pixels << 1, 2, 3, 4;
  p.target = test::mask_from({{1, 0}, {0, 0}});
  const auto h = flip_horizontal(p);
  ImageF expect(2, 2);
  expect << 2, 1, 4, 3;
  CHECK((h.pixels == expect).all());
  CHECK((h.target == test::mask_from({{0, 1}, {0, 0}})).all());
  const auto v = flip_vertical(p);
  CHECK(v.pixels(0, 0) == 3);
  CHECK(v.target(1, 0) == 1);

  PatchSample q;
  q.pixels = ImageF::Random(24, 24);
  q.target = (q.pixels > 0.3f).cast<std::uint8_t>();
  const auto same = apply_displacement(q, DisplacementField::zero(24));
  CHECK((same.pixels == q.pixels).all());
  CHECK((same.target == q.target).all());
}

TEST_CASE("augmentation keeps the target binary and aligned") {
  Rng rng(12);
  SamplerConfig cfg;
  cfg.augment.elastic.probability = 1.0;
  for (int t = 0; t < 10; ++t) {
    PatchSample q;
    q.pixels = ImageF::Zero(48, 48);
    q.target = Mask::Zero(48, 48);
    q.pixels.block(10, 10, 20, 8).setConstant(1.0f);
    q.target.block(10, 10, 20, 8).setOnes();
    const auto out = augment(q, cfg.augment, rng);
    CHECK(out.target.maxCoeff() <= 1);
    // Nearest-neighbour target agrees with bilinear pixels away from edges.
    int agree = 0, total = 0;
    for (Eigen::Index i = 0; i < out.pixels.size(); ++i) {
      const float v = out.pixels.data()[i];
      if (v < 0.05f || v > 0.95f) {
        ++total;
        agree += (v > 0.5f) == (out.target.data()[i] == 1);
      }
    }
    CHECK(agree == total);
  }
}

TEST_CASE("elastic field magnitude") {
  Rng rng(13);
  ElasticConfig cfg;
  const auto f = make_elastic_field(256, cfg, rng);
  CHECK(f.dr.rows() == 256);
  CHECK(f.dr.abs().maxCoeff() > 1.0f);
  // Catmull-Rom overshoot stays within a modest margin of the control bound.
  CHECK(f.dr.abs().maxCoeff() <= 1.25 * cfg.max_displacement_px);
}
