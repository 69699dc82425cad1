#include <doctest.h>

#include <fstream>

#include "fbseg/config.hpp"
#include "fbseg/provenance.hpp"
#include "test_util.hpp"

using namespace fbseg;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    auto c = run_config_from_json(j);
    c.validate();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults") {
  const auto c = run_config_from_json(json::object());
  CHECK(c.unet == UNetConfig{});
  CHECK(c.train.learning_rate == 1e-4);
  CHECK(c.train.epochs == 1000);
  CHECK(c.train.batch_size == 2);
  CHECK(c.train.folds == 5);
  CHECK(c.pretrain.epochs == 200);
  CHECK(c.sampler.patch_size == 1024);
  CHECK(c.inference.stride_fraction == 0.25);
  CHECK(c.inference.gaussian_sigma_px == 2.0);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("json round trip") {
  RunConfig c;
  c.seed = 12;
  c.unet.levels = 7;
  c.unet.normalization = Normalization::Instance;
  c.sampler.included_classes = {1, 2};
  c.sampler.patch_size = 256;
  c.train.loss.mode = LossMode::FocalDice;
  c.train.pretrained_checkpoint = "p.ckpt";
  c.inference.ensemble = {"a.ckpt", "b.ckpt"};
  c.synth.splits = SplitCounts{4, 2, 2};
  c.synth.n_sections = 8;
  c.synth.spec.width_px[2] = {5, 7};
  c.finalize();
  const auto j = to_json(c);
  const auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.train.sampler.included_classes == ClassSet{1, 2});
  CHECK(back.train.seed == 12);
  CHECK(back.pretrain.sampler.patch_size == 256);
  CHECK(back.synth.spec.seed == 12);
}

TEST_CASE("errors name the offending field") {
  CHECK(error_of({{"train", {{"epochs", "many"}}}}).find("train.epochs") != std::string::npos);
  CHECK(error_of({{"train", {{"epochs", 0}}}}).find("train.epochs") != std::string::npos);
  CHECK(error_of({{"unet", {{"levles", 3}}}}).find("unet.levles") != std::string::npos);
  CHECK(error_of({{"train", {{"loss", {{"mode", "l1"}}}}}}).find("train.loss.mode") != std::string::npos);
  CHECK(error_of({{"sampler", {{"augment", {{"elastic", {{"grid", 1}}}}}}}}).find("sampler.augment.elastic.grid") !=
        std::string::npos);
  CHECK(error_of({{"unet", {{"levels", 9}}}, {"sampler", {{"patch_size", 300}}}}).find("sampler.patch_size") !=
        std::string::npos);
  CHECK(error_of({{"synth", {{"spec", {{"canvas", {{"height", 100}}}}}}}}).find("synth.canvas") != std::string::npos);
}

TEST_CASE("overrides take precedence") {
  json j = {{"train", {{"epochs", 10}}}};
  apply_override(j, "train.epochs=3");
  apply_override(j, "train.loss.mode=focal_dice");
  apply_override(j, "inference.ensemble=[\"a\",\"b\"]");
  apply_override(j, "paths.output_dir=out dir");
  const auto c = run_config_from_json(j);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.loss.mode == LossMode::FocalDice);
  CHECK(c.inference.ensemble.size() == 2);
  CHECK(c.paths.output_dir == "out dir");
  CHECK_THROWS_AS(apply_override(j, "novalue"), ValidationError);
  CHECK_THROWS_AS(apply_override(j, "train.epochs.x=1"), ValidationError);

  test::TempDir dir("config_file");
  std::ofstream(dir.path / "c.json") << R"({"seed": 4, "train": {"epochs": 8}})";
  const auto path = dir.path / "c.json";
  const auto loaded = load_run_config(&path, {"seed=9"});
  CHECK(loaded.seed == 9);
  CHECK(loaded.train.epochs == 8);
}

TEST_CASE("git blob hash") {
  // `printf 'hello\n' | git hash-object --stdin`
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  // Empty blob.
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
