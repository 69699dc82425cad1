#include <doctest.h>

#include <set>

#include "fbseg/inference.hpp"
#include "fbseg/rng.hpp"

using namespace fbseg;

namespace {

class ConstantModel final : public TileModel {
 public:
  explicit ConstantModel(float v) : v_(v) {}
  ImageF predict(const ImageF& tile) const override { return ImageF::Constant(tile.rows(), tile.cols(), v_); }

 private:
  float v_;
};

// Returns a different constant for every call, in call order.
class CountingModel final : public TileModel {
 public:
  ImageF predict(const ImageF& tile) const override {
    return ImageF::Constant(tile.rows(), tile.cols(), static_cast<float>(++calls_) / 16.0f);
  }
  mutable int calls_ = 0;
};

SectionImage section(int h, int w) {
  SectionImage s;
  s.section_id = "x";
  s.pixels = ImageF::Random(h, w);
  return s;
}

InferenceConfig config(int patch, double stride_fraction) {
  InferenceConfig c;
  c.patch_size = patch;
  c.stride_fraction = stride_fraction;
  return c;
}

}  // namespace

TEST_CASE("tile positions") {
  CHECK(tile_positions(2048, 2048, 1024, 256).size() == 25);
  const auto one = tile_positions(1024, 1024, 1024, 256);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == TilePosition{0, 0});

  // Oracle: the rule enumerated by hand per axis.
  std::vector<int> axis;
  for (int p = 0; p + 1024 <= 1500; p += 256) axis.push_back(p);
  if (axis.back() != 1500 - 1024) axis.push_back(1500 - 1024);
  CHECK(axis == std::vector<int>{0, 256, 476});
  const auto t = tile_positions(1500, 1500, 1024, 256);
  REQUIRE(t.size() == axis.size() * axis.size());
  CHECK(t.size() == 9);
  CHECK(t[1] == TilePosition{0, 256});
  CHECK(t.back() == TilePosition{476, 476});
  CHECK_THROWS_AS(tile_positions(100, 2000, 1024, 256), ValidationError);
}

TEST_CASE("tiles cover every pixel") {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const int p = static_cast<int>(rng.uniform_int(4, 40));
    const int h = p + static_cast<int>(rng.uniform_int(0, 90)), w = p + static_cast<int>(rng.uniform_int(0, 90));
    const int s = static_cast<int>(rng.uniform_int(1, p));
    Image<int> cover = Image<int>::Zero(h, w);
    for (const auto& t : tile_positions(h, w, p, s)) cover.block(t.row, t.col, p, p) += 1;
    CHECK(cover.minCoeff() >= 1);
  }
}

TEST_CASE("constant model gives a seamless constant map") {
  ConstantModel m(0.7f);
  const TileModel* members[] = {&m};
  const auto map = predict_section(config(64, 0.25), members, section(150, 97));
  CHECK(map.probs.rows() == 150);
  CHECK(map.probs.cols() == 97);
  CHECK(map.probs.maxCoeff() - map.probs.minCoeff() <= 1e-6f);
  CHECK(map.probs(0, 0) == doctest::Approx(0.7));
}

TEST_CASE("ensemble members are averaged") {
  ConstantModel a(0.2f), b(0.6f);
  const TileModel* members[] = {&a, &b};
  const auto map = predict_section(config(32, 0.5), members, section(64, 64));
  CHECK((map.probs - 0.4f).abs().maxCoeff() < 1e-6f);
  CHECK_THROWS_AS(predict_section(config(32, 0.5), std::span<const TileModel* const>{}, section(64, 64)),
                  ValidationError);
}

TEST_CASE("overlap blending equals the brute-force mean on an 8x8 grid") {
  CountingModel m;
  const TileModel* members[] = {&m};
  const auto map = predict_section(config(4, 0.5), members, section(8, 8));

  // Oracle: tile k (row-major, origins {0,2,4} per axis) predicts (k+1)/16;
  // each pixel is the mean over the tiles covering it.
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double sum = 0;
      int n = 0, k = 0;
      for (int tr : {0, 2, 4})
        for (int tc : {0, 2, 4}) {
          ++k;
          if (r >= tr && r < tr + 4 && c >= tc && c < tc + 4) {
            sum += k / 16.0;
            ++n;
          }
        }
      CHECK(map.probs(r, c) == doctest::Approx(sum / n).epsilon(1e-6));
    }
}

TEST_CASE("small sections are reflect-padded") {
  ConstantModel m(0.3f);
  const TileModel* members[] = {&m};
  const auto map = predict_section(config(64, 0.25), members, section(40, 50));
  CHECK(map.probs.rows() == 40);
  CHECK(map.probs.cols() == 50);
  CHECK(reflect_index(-1, 5) == 0);
  CHECK(reflect_index(5, 5) == 4);
  CHECK(reflect_index(7, 5) == 2);
  ImageF x(1, 3);
  x << 1, 2, 3;
  const auto padded = reflect_pad(x, 1, 7);
  CHECK(padded(0, 3) == 3);
  CHECK(padded(0, 4) == 2);
}

TEST_CASE("postprocess examples") {
  InferenceConfig cfg;
  cfg.gaussian_sigma_px = 0;
  ProbabilityMap map{"x", ImageF::Zero(40, 40)};
  map.probs.block(2, 2, 10, 10).setConstant(0.9f);
  map.probs.block(30, 30, 1, 3).setConstant(0.9f);
  const Mask m = postprocess(cfg, map);
  CHECK(m.cast<int>().sum() == 100);
  CHECK(m(30, 30) == 0);

  CHECK(postprocess(InferenceConfig{}, ProbabilityMap{"z", ImageF::Zero(30, 30)}).maxCoeff() == 0);

  for (double sigma : {0.0, 1.0, 2.0, 5.0}) {
    InferenceConfig c;
    c.gaussian_sigma_px = sigma;
    const Mask all = postprocess(c, ProbabilityMap{"u", ImageF::Constant(33, 21, 0.7f)});
    CHECK(all.minCoeff() == 1);
    const ImageF smoothed = gaussian_smooth(ImageF::Constant(33, 21, 0.7f), sigma);
    CHECK((smoothed - 0.7f).abs().maxCoeff() < 1e-6f);
  }
}

TEST_CASE("postprocess is idempotent with sigma 0") {
  Rng rng(8);
  InferenceConfig cfg;
  cfg.gaussian_sigma_px = 0;
  cfg.min_component_area_px = 5;
  ImageF p(50, 50);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(rng.uniform());
  const Mask once = postprocess(cfg, {"a", p});
  const Mask twice = postprocess(cfg, {"a", once.cast<float>()});
  CHECK((once == twice).all());
}

TEST_CASE("inference config validation") {
  auto c = config(64, 0.0);
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = config(64, 0.25);
  c.threshold = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK(config(1024, 0.25).stride() == 256);
  CHECK_THROWS_AS(load_ensemble({}), ValidationError);
}
