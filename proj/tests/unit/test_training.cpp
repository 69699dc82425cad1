#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fbseg/synthgen.hpp"
#include "fbseg/training.hpp"
#include "test_util.hpp"

using namespace fbseg;

namespace {

DatasetManifest tiny_dataset(const std::filesystem::path& dir, int train, int test, int unlabeled) {
  SynthDatasetConfig cfg;
  cfg.seed = 1;
  cfg.spec.height = cfg.spec.width = 256;
  cfg.spec.n_bundles = {1, 1, 0};
  cfg.spec.length_px = {60, 120};
  cfg.spec.n_terminal_fields = 1;
  cfg.spec.outside_fraction = 0;
  cfg.n_sections = train + test + unlabeled;
  cfg.splits = SplitCounts{train, test, unlabeled};
  return generate_dataset(cfg, dir);
}

UNetConfig tiny_unet() {
  UNetConfig c;
  c.levels = 3;
  c.base_channels = 4;
  return c;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.folds = 2;
  c.learning_rate = 1e-3;
  c.sampler.patch_size = 32;
  c.sampler.patches_per_section = 2;
  c.seed = 5;
  return c;
}

DatasetManifest with_brains(int per_brain_a, int per_brain_b) {
  DatasetManifest m;
  for (int i = 0; i < per_brain_a + per_brain_b; ++i) {
    ManifestEntry e;
    e.brain_id = i < per_brain_a ? "A" : "B";
    e.section_id = e.brain_id + std::to_string(i);
    e.image_path = e.section_id + ".png";
    e.label_path = e.section_id + "_l.png";
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace

TEST_CASE("fold assignment") {
  const auto m = with_brains(5, 5);
  const auto f = make_folds(m, 5, 1);
  CHECK(f.size() == 10);
  std::map<int, std::map<char, int>> per;
  for (const auto& [id, fold] : f) per[fold][id[0]] += 1;
  for (int k = 0; k < 5; ++k) {
    CHECK(per[k]['A'] == 1);
    CHECK(per[k]['B'] == 1);
  }
  CHECK(make_folds(m, 5, 1) == f);

  const auto five = make_folds(with_brains(3, 2), 5, 9);
  std::set<int> used;
  for (const auto& [id, fold] : five) used.insert(fold);
  CHECK(used.size() == 5);
  CHECK_THROWS_AS(make_folds(with_brains(2, 1), 5, 0), ValidationError);

  auto given = with_brains(2, 2);
  for (std::size_t i = 0; i < given.entries.size(); ++i) given.entries[i].fold = static_cast<int>(i % 2);
  const auto r = resolve_folds(given, 2, 0);
  CHECK(r.at("A0") == 0);
  CHECK(r.at("A1") == 1);
}

TEST_CASE("one epoch smoke run") {
  test::TempDir dir("train_smoke");
  const auto m = tiny_dataset(dir.path, 2, 0, 0);
  TrainHooks hooks;
  hooks.metrics_log = dir.path / "metrics.jsonl";
  const auto r = train_fold(m, 0, tiny_unet(), tiny_train(1), hooks);
  REQUIRE(r.history.size() == 1);
  CHECK(std::isfinite(r.history[0].train_loss));
  CHECK(r.history[0].holdout_loss);
  CHECK(r.model.provenance.task == "segmentation");
  CHECK(r.model.provenance.fold == 0);
  std::ifstream log(dir.path / "metrics.jsonl");
  std::string line;
  REQUIRE(std::getline(log, line));
  CHECK(nlohmann::json::parse(line).at("epoch") == 1);
}

TEST_CASE("divergence aborts with the epoch") {
  test::TempDir dir("train_nan");
  const auto m = tiny_dataset(dir.path, 2, 0, 0);
  auto cfg = tiny_train(3);
  cfg.learning_rate = 1e30;
  try {
    train_fold(m, 0, tiny_unet(), cfg);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(std::string(e.what()).find("non-finite loss at epoch") != std::string::npos);
  }
}

TEST_CASE("training is deterministic and reduces the loss") {
  test::TempDir dir("train_det");
  const auto m = tiny_dataset(dir.path, 4, 0, 0);
  auto cfg = tiny_train(12);
  const auto a = train_fold(m, 0, tiny_unet(), cfg);
  const auto b = train_fold(m, 0, tiny_unet(), cfg);
  for (std::size_t i = 0; i < a.model.params.size(); ++i) CHECK((a.model.params[i].value == b.model.params[i].value).all());
  auto mean = [](const std::vector<EpochRecord>& h, std::size_t from, std::size_t to) {
    double s = 0;
    for (std::size_t i = from; i < to; ++i) s += h[i].train_loss;
    return s / static_cast<double>(to - from);
  };
  CHECK(mean(a.history, 9, 12) < mean(a.history, 0, 3));
}

TEST_CASE("gradient accumulation") {
  test::TempDir dir("train_accum");
  const auto m = tiny_dataset(dir.path, 4, 0, 0);
  auto cfg = tiny_train(2);
  cfg.batch_size = 1;
  const auto plain = train_fold(m, 0, tiny_unet(), cfg);
  cfg.accumulation_steps = 2;
  const auto a = train_fold(m, 0, tiny_unet(), cfg);
  const auto b = train_fold(m, 0, tiny_unet(), cfg);
  bool same_as_plain = true;
  for (std::size_t i = 0; i < a.model.params.size(); ++i) {
    CHECK((a.model.params[i].value == b.model.params[i].value).all());
    same_as_plain = same_as_plain && (a.model.params[i].value == plain.model.params[i].value).all();
  }
  // Fewer, averaged steps land somewhere else.
  CHECK_FALSE(same_as_plain);

  cfg.accumulation_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("pretraining and fine-tuning") {
  test::TempDir dir("pretrain");
  const auto m = tiny_dataset(dir.path, 2, 0, 2);
  PretrainConfig pcfg;
  pcfg.epochs = 2;
  pcfg.learning_rate = 1e-3;
  pcfg.sampler.patch_size = 32;
  pcfg.sampler.patches_per_section = 2;
  pcfg.seed = 4;
  const auto p = pretrain_reconstruction(m, tiny_unet(), pcfg);
  CHECK_FALSE(p.model.config.skip_connections);
  CHECK(p.model.provenance.task == "reconstruction");
  CHECK(p.history.size() == 2);
  // Monitor-set MSE rides along in holdout_loss.
  REQUIRE(p.history[1].holdout_loss);
  CHECK(std::isfinite(*p.history[1].holdout_loss));
  const auto p2 = pretrain_reconstruction(m, tiny_unet(), pcfg);
  for (std::size_t i = 0; i < p.model.params.size(); ++i) CHECK((p.model.params[i].value == p2.model.params[i].value).all());

  save_checkpoint(p.model, dir.path / "pre.ckpt");
  auto cfg = tiny_train(1);
  const auto cold = train_fold(m, 0, tiny_unet(), cfg);
  cfg.pretrained_checkpoint = (dir.path / "pre.ckpt").string();
  const auto warm = train_fold(m, 0, tiny_unet(), cfg);
  CHECK(warm.model.provenance.pretrained);
  CHECK(warm.history[0].train_loss != cold.history[0].train_loss);

  auto deeper = tiny_unet();
  deeper.levels = 4;
  CHECK_THROWS_AS(train_fold(m, 0, deeper, cfg), ValidationError);

  // Pretraining never reads label files.
  std::filesystem::remove(m.resolve(*m.with_split(Split::Train)[0]->label_path));
  CHECK_NOTHROW(pretrain_reconstruction(m, tiny_unet(), pcfg));
}

TEST_CASE("pretraining needs unlabeled sections") {
  test::TempDir dir("pretrain_none");
  const auto m = tiny_dataset(dir.path, 2, 0, 0);
  PretrainConfig pcfg;
  pcfg.sampler.patch_size = 32;
  CHECK_THROWS_AS(pretrain_reconstruction(m, tiny_unet(), pcfg), ValidationError);
}
