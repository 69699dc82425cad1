#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "fbseg/image_codec.hpp"
#include "fbseg/rng.hpp"
#include "fbseg/slide_io.hpp"
#include "test_util.hpp"

using namespace fbseg;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

nlohmann::json entry(const std::string& id, const std::string& split, bool labels, std::optional<int> fold = {}) {
  nlohmann::json e = {{"section_id", id}, {"brain_id", "M1"}, {"section_index", 0}, {"image_path", id + ".png"},
                      {"split", split}};
  if (labels) e["label_path"] = id + "_labels.png";
  if (fold) e["fold"] = *fold;
  return e;
}

std::string manifest_text(std::initializer_list<nlohmann::json> list) {
  const auto entries = nlohmann::json::array_t(list);
  return nlohmann::json{{"format", "fbseg-manifest"}, {"version", 1}, {"entries", entries}}.dump();
}

}  // namespace

TEST_CASE("manifest parse and validation") {
  test::TempDir dir("manifest");
  const auto path = dir.path / "m.json";

  write_text(path, manifest_text({entry("M1_s000", "train", true, 0), entry("M1_s001", "train", true, 1),
                                  entry("M1_s002", "unlabeled", false)}));
  const auto m = load_manifest(path);
  CHECK(m.entries.size() == 3);
  CHECK(m.entries[1].fold == 1);
  CHECK(m.resolve("x.png") == dir.path / "x.png");

  write_text(path, manifest_text({entry("M1_s003", "train", false)}));
  try {
    load_manifest(path);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("M1_s003") != std::string::npos);
  }

  write_text(path, manifest_text({entry("M1_s010", "train", true), entry("M1_s010", "test", true)}));
  try {
    load_manifest(path);
    FAIL("expected a duplicate-id error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }

  auto bad = entry("M1_s004", "train", true);
  bad["colour"] = "blue";
  write_text(path, manifest_text({bad}));
  CHECK_THROWS_AS(load_manifest(path), ValidationError);
}

TEST_CASE("manifest save/load round trip") {
  test::TempDir dir("manifest_rt");
  DatasetManifest m;
  m.root = dir.path;
  ManifestEntry e;
  e.section_id = "A_s1";
  e.brain_id = "A";
  e.image_path = "a.png";
  e.label_path = "a_l.png";
  e.outline_path = "a_o.png";
  e.fold = 2;
  m.entries.push_back(e);
  save_manifest(m, dir.path / "m.json");
  const auto back = load_manifest(dir.path / "m.json");
  REQUIRE(back.entries.size() == 1);
  CHECK(back.entries[0].label_path == e.label_path);
  CHECK(back.entries[0].outline_path == e.outline_path);
  CHECK(back.entries[0].fold == 2);
  CHECK(back.entries[0].split == Split::Train);
}

TEST_CASE("load_section checks shapes and codes") {
  test::TempDir dir("load_section");
  ImageF img = ImageF::Constant(512, 512, 100);
  save_section_image(dir.path / "s.png", img);
  Mask labels = Mask::Zero(512, 512);
  labels(10, 10) = 1;
  labels(20, 20) = 3;
  save_label_mask(dir.path / "l.png", labels);
  save_label_mask(dir.path / "small.png", Mask::Zero(256, 256));
  Mask bad = labels;
  bad(0, 0) = 7;
  write_png_gray8(dir.path / "bad.png", bad);

  DatasetManifest m;
  m.root = dir.path;
  ManifestEntry e;
  e.section_id = "s";
  e.brain_id = "b";
  e.image_path = "s.png";
  e.label_path = "l.png";
  auto loaded = load_section(m, e);
  REQUIRE(loaded.labels);
  CHECK((loaded.labels->labels == labels).all());
  CHECK(loaded.image.pixels.rows() == 512);
  CHECK(loaded.outline_or_default().inside.minCoeff() == 1);

  e.label_path = "small.png";
  CHECK_THROWS_AS(load_section(m, e), ValidationError);
  e.label_path = "bad.png";
  CHECK_THROWS_AS(load_section(m, e), ValidationError);
  // Skip never opens the label file.
  e.label_path = "does_not_exist.png";
  CHECK_FALSE(load_section(m, e, LabelPolicy::Skip).labels);
}

TEST_CASE("image and mask round trips are bit-exact") {
  test::TempDir dir("roundtrip");
  Rng rng(5);
  ImageF ints(37, 53), floats(37, 53);
  Mask labels(37, 53), outline(37, 53);
  for (Eigen::Index i = 0; i < ints.size(); ++i) {
    ints.data()[i] = static_cast<float>(rng.uniform_int(0, 65535));
    floats.data()[i] = static_cast<float>(rng.normal(0, 1000));
    labels.data()[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    outline.data()[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  }
  for (const char* ext : {".png", ".tif"}) {
    save_section_image(dir.path / (std::string("i") + ext), ints);
    CHECK((load_section_image(dir.path / (std::string("i") + ext)) == ints).all());
  }
  save_section_image(dir.path / "f.tif", floats);
  CHECK((load_section_image(dir.path / "f.tif") == floats).all());
  save_label_mask(dir.path / "l.png", labels);
  CHECK((load_label_mask(dir.path / "l.png") == labels).all());
  save_outline_mask(dir.path / "o.png", outline);
  CHECK((load_outline_mask(dir.path / "o.png") == outline).all());
}

TEST_CASE("downsample") {
  CHECK((downsample(ImageD(ImageD::Constant(8, 8, 5.0)), 4) == ImageD::Constant(2, 2, 5.0)).all());
  ImageD x = ImageD::Random(6, 7);
  CHECK((downsample(x, 1) == x).all());

  ImageD block(4, 4);
  double oracle = 0;
  for (int i = 0; i < 16; ++i) {
    block.data()[i] = i;
    oracle += i;
  }
  oracle /= 16;
  const auto d = downsample(block, 4);
  REQUIRE(d.size() == 1);
  CHECK(d(0, 0) == doctest::Approx(oracle));
  CHECK(oracle == 7.5);

  CHECK_THROWS_AS(downsample(block, 0), ValidationError);

  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const int h = static_cast<int>(rng.uniform_int(8, 70)), w = static_cast<int>(rng.uniform_int(8, 70));
    for (int f : {1, 2, 4, 8}) {
      const auto out = downsample(ImageF(ImageF::Zero(h, w)), f);
      CHECK(out.rows() == h / f);
      CHECK(out.cols() == w / f);
    }
  }
}

TEST_CASE("label downsampling keeps thin annotations and adds no codes") {
  Mask labels = Mask::Zero(8, 8);
  labels(1, 2) = 3;
  labels(6, 6) = 1;
  labels(7, 7) = 2;
  const Mask d = downsample_labels(labels, 4);
  CHECK(d(0, 0) == 3);
  CHECK(d(0, 1) == 0);
  CHECK(d(1, 1) == 2);

  Rng rng(2);
  Mask r(16, 16);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 1) * 2);
  const Mask dr = downsample_labels(r, 4);
  for (Eigen::Index i = 0; i < dr.size(); ++i) CHECK((dr.data()[i] == 0 || dr.data()[i] == 2));
}
