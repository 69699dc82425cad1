#include "fbseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fbseg/adam.hpp"

namespace fbseg {
namespace {

struct LabeledSection {
  SectionImage image;
  Mask target;
};

class MetricsWriter {
 public:
  explicit MetricsWriter(const TrainHooks& hooks) : hooks_(hooks) {
    if (hooks.metrics_log) {
      out_.open(*hooks.metrics_log, std::ios::trunc);
      if (!out_) throw std::runtime_error("cannot write metrics log " + hooks.metrics_log->string());
    }
  }

  void write(const EpochRecord& r) {
    if (out_.is_open()) {
      out_ << epoch_record_json(r) << "\n";
      out_.flush();
    }
    if (hooks_.on_epoch) hooks_.on_epoch(r);
  }

 private:
  const TrainHooks& hooks_;
  std::ofstream out_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TensorF stack_pixels(const std::vector<PatchSample>& patches, std::size_t begin, std::size_t end) {
  const int p = static_cast<int>(patches[begin].pixels.rows());
  TensorF batch(static_cast<int>(end - begin), 1, p, p);
  for (std::size_t i = begin; i < end; ++i) batch.set_channel_image(static_cast<int>(i - begin), 0, patches[i].pixels);
  return batch;
}

Vector<float> stack_targets(const std::vector<PatchSample>& patches, std::size_t begin, std::size_t end) {
  const Eigen::Index plane = patches[begin].target.size();
  Vector<float> t(static_cast<Eigen::Index>(end - begin) * plane);
  for (std::size_t i = begin; i < end; ++i)
    t.segment(static_cast<Eigen::Index>(i - begin) * plane, plane) =
        Eigen::Map<const Vector<std::uint8_t>>(patches[i].target.data(), plane).cast<float>();
  return t;
}

void check_finite(double loss, int epoch) {
  if (!std::isfinite(loss)) throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch));
}

// Adds one segmentation batch's parameter gradients into grads; returns the batch loss.
double segmentation_gradients(const ModelState& model, const LossConfig& loss_cfg, const TensorF& batch,
                              const Vector<float>& targets, Tape<float>& tape, Gradients<float>& grads, int epoch) {
  const auto logits = forward(model, batch, tape);
  const auto probs = sigmoid(logits);
  const double loss = total_loss(loss_cfg, probs.data, targets);
  check_finite(loss, epoch);
  TensorF grad = probs;
  grad.data = total_gradient(loss_cfg, probs.data, targets) * probs.data * (1.0f - probs.data);
  backward(model, tape, grad, grads);
  return loss;
}

double segmentation_eval(const ModelState& model, const LossConfig& loss_cfg, const std::vector<PatchSample>& patches,
                         int batch_size) {
  double acc = 0.0;
  int batches = 0;
  for (std::size_t b = 0; b < patches.size(); b += batch_size) {
    const std::size_t e = std::min(patches.size(), b + static_cast<std::size_t>(batch_size));
    const auto probs = predict_probabilities(model, stack_pixels(patches, b, e));
    acc += total_loss(loss_cfg, probs.data, stack_targets(patches, b, e));
    ++batches;
  }
  return acc / std::max(batches, 1);
}

double reconstruction_eval(const ModelState& model, const std::vector<PatchSample>& patches, int batch_size) {
  double acc = 0.0;
  for (std::size_t b = 0; b < patches.size(); b += batch_size) {
    const std::size_t e = std::min(patches.size(), b + static_cast<std::size_t>(batch_size));
    const auto batch = stack_pixels(patches, b, e);
    acc += mse_loss(batch.data, forward(model, batch).data) * static_cast<double>(e - b);
  }
  return acc / static_cast<double>(patches.size());
}

std::vector<LabeledSection> load_labeled(const DatasetManifest& manifest, const std::vector<const ManifestEntry*>& entries,
                                         const ClassSet& classes) {
  std::vector<LabeledSection> out;
  for (const auto* e : entries) {
    auto loaded = load_section(manifest, *e, LabelPolicy::Load);
    if (!loaded.labels) throw ValidationError("section '" + e->section_id + "' has no label mask");
    out.push_back({std::move(loaded.image), binarize_labels(loaded.labels->labels, classes)});
  }
  return out;
}

TrainResult run_segmentation(ModelState model, const std::vector<LabeledSection>& train,
                             const std::vector<LabeledSection>& holdout, const TrainConfig& cfg, int fold,
                             const TrainHooks& hooks) {
  if (train.empty()) throw ValidationError("fold " + std::to_string(fold) + " leaves no training sections");
  const auto t0 = std::chrono::steady_clock::now();
  MetricsWriter writer(hooks);
  Adam<float> adam(model, AdamConfig{cfg.learning_rate});
  Tape<float> tape;

  std::vector<PatchSample> holdout_patches;
  for (const auto& s : holdout) {
    Rng rng(derive_seed(cfg.seed, "holdout/" + s.image.section_id));
    auto patches = sample_patches(s.image, s.target, cfg.sampler, rng);
    holdout_patches.insert(holdout_patches.end(), patches.begin(), patches.end());
  }

  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<PatchSample> patches;
    for (const auto& s : train) {
      Rng rng(derive_seed(cfg.seed, "sample/" + s.image.section_id, static_cast<std::uint64_t>(epoch)));
      for (auto& p : sample_patches(s.image, s.target, cfg.sampler, rng))
        patches.push_back(augment(std::move(p), cfg.sampler.augment, rng));
    }
    Rng order(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    order.shuffle(patches);

    double acc = 0.0;
    int batches = 0, pending = 0;
    auto grads = zero_gradients(model);
    for (std::size_t b = 0; b < patches.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(patches.size(), b + static_cast<std::size_t>(cfg.batch_size));
      acc += segmentation_gradients(model, cfg.loss, stack_pixels(patches, b, e), stack_targets(patches, b, e), tape,
                                    grads, epoch);
      ++batches;
      // Accumulated gradients are averaged over the batches they span.
      if (++pending == cfg.accumulation_steps || e == patches.size()) {
        if (pending > 1)
          for (auto& g : grads) g /= static_cast<float>(pending);
        adam.step(model, grads);
        for (auto& g : grads) g.setZero();
        pending = 0;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.fold = fold;
    rec.train_loss = acc / batches;
    if (!holdout_patches.empty() && (epoch % cfg.holdout_interval == 0 || epoch == cfg.epochs)) {
      rec.holdout_loss = segmentation_eval(model, cfg.loss, holdout_patches, cfg.batch_size);
    }
    rec.wallclock = seconds_since(t0);
    writer.write(rec);
    result.history.push_back(rec);
  }
  model.provenance.task = "segmentation";
  model.provenance.loss_mode = loss_mode_name(cfg.loss.mode);
  model.provenance.epochs = cfg.epochs;
  model.provenance.seed = cfg.seed;
  model.provenance.fold = fold;
  result.model = std::move(model);
  return result;
}

struct FoldSplit {
  std::vector<const ManifestEntry*> train, holdout;
};

FoldSplit split_for_fold(const DatasetManifest& manifest, int fold_id, const TrainConfig& cfg) {
  if (fold_id < 0 || fold_id >= cfg.folds) {
    throw ValidationError("fold " + std::to_string(fold_id) + " outside 0.." + std::to_string(cfg.folds - 1));
  }
  const auto folds = resolve_folds(manifest, cfg.folds, cfg.seed);
  FoldSplit s;
  for (const auto* e : manifest.with_split(Split::Train)) {
    (folds.at(e->section_id) == fold_id ? s.holdout : s.train).push_back(e);
  }
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("train.learning_rate must be > 0");
  if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (folds < 2) throw ValidationError("train.folds must be >= 2");
  if (folds > kMaxFolds) throw ValidationError("train.folds must be <= 5");
  if (holdout_interval < 1) throw ValidationError("train.holdout_interval must be >= 1");
  if (accumulation_steps < 1) throw ValidationError("train.accumulation_steps must be >= 1");
  loss.validate();
  sampler.validate();
}

void PretrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("pretrain.learning_rate must be > 0");
  if (epochs < 1) throw ValidationError("pretrain.epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("pretrain.batch_size must be >= 1");
  if (monitor_patches_per_section < 0) throw ValidationError("pretrain.monitor_patches_per_section must be >= 0");
  sampler.validate();
}

FoldAssignment make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("make_folds: k must be >= 1");
  std::map<std::string, std::vector<std::string>> by_brain;
  std::size_t labeled = 0;
  for (const auto* e : manifest.with_split(Split::Train)) {
    by_brain[e->brain_id].push_back(e->section_id);
    ++labeled;
  }
  if (labeled < static_cast<std::size_t>(k)) {
    throw ValidationError("make_folds: " + std::to_string(labeled) + " labeled sections is fewer than k = " +
                          std::to_string(k));
  }
  FoldAssignment out;
  int dealer = 0;
  for (auto& [brain, ids] : by_brain) {
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, "folds/" + brain));
    rng.shuffle(ids);
    for (const auto& id : ids) out[id] = dealer++ % k;
  }
  return out;
}

FoldAssignment resolve_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  FoldAssignment given;
  const auto train = manifest.with_split(Split::Train);
  for (const auto* e : train) {
    if (!e->fold) return make_folds(manifest, k, seed);
    if (*e->fold >= k) {
      throw ValidationError("section '" + e->section_id + "' has fold " + std::to_string(*e->fold) + " but k = " +
                            std::to_string(k));
    }
    given[e->section_id] = *e->fold;
  }
  if (given.empty()) throw ValidationError("manifest has no labeled train sections");
  return given;
}

TrainResult train_fold(const DatasetManifest& manifest, int fold_id, const UNetConfig& unet, const TrainConfig& cfg,
                       const TrainHooks& hooks) {
  cfg.validate();
  unet.validate();
  if (cfg.pretrained_checkpoint) return fine_tune(*cfg.pretrained_checkpoint, manifest, fold_id, unet, cfg, hooks);
  const auto split = split_for_fold(manifest, fold_id, cfg);
  const auto train = load_labeled(manifest, split.train, cfg.sampler.included_classes);
  const auto holdout = load_labeled(manifest, split.holdout, cfg.sampler.included_classes);
  Rng init(derive_seed(cfg.seed, "init"));
  auto model = build_unet<float>(unet, init);
  return run_segmentation(std::move(model), train, holdout, cfg, fold_id, hooks);
}

TrainResult pretrain_reconstruction(const DatasetManifest& manifest, const UNetConfig& unet, const PretrainConfig& cfg,
                                    const TrainHooks& hooks) {
  cfg.validate();
  UNetConfig rcfg = unet;
  rcfg.skip_connections = false;
  rcfg.out_channels = rcfg.in_channels;
  rcfg.validate();

  const auto unlabeled = manifest.with_split(Split::Unlabeled);
  if (unlabeled.empty()) throw ValidationError("pretraining requires unlabeled sections in the manifest");
  std::vector<SectionImage> sections;
  for (const auto* e : unlabeled) sections.push_back(load_section(manifest, *e, LabelPolicy::Skip).image);
  for (const auto* e : manifest.with_split(Split::Train))
    sections.push_back(load_section(manifest, *e, LabelPolicy::Skip).image);

  const auto t0 = std::chrono::steady_clock::now();
  MetricsWriter writer(hooks);
  Rng init(derive_seed(cfg.seed, "pretrain-init"));
  auto model = build_unet<float>(rcfg, init);
  Adam<float> adam(model, AdamConfig{cfg.learning_rate});
  Tape<float> tape;
  const int p = cfg.sampler.patch_size;

  // Per-epoch training loss is noisy (fresh, augmented patches every epoch);
  // the monitor set gives a like-for-like curve.
  std::vector<PatchSample> monitor;
  for (const auto& s : sections) {
    Rng rng(derive_seed(cfg.seed, "pretrain-monitor/" + s.section_id));
    for (auto& patch : sample_uniform_patches(s, p, cfg.monitor_patches_per_section, rng))
      monitor.push_back(std::move(patch));
  }

  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<PatchSample> patches;
    for (const auto& s : sections) {
      Rng rng(derive_seed(cfg.seed, "pretrain-sample/" + s.section_id, static_cast<std::uint64_t>(epoch)));
      for (auto& patch : sample_uniform_patches(s, p, cfg.sampler.patches_per_section, rng))
        patches.push_back(augment(std::move(patch), cfg.sampler.augment, rng));
    }
    Rng order(derive_seed(cfg.seed, "pretrain-shuffle", static_cast<std::uint64_t>(epoch)));
    order.shuffle(patches);

    double acc = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < patches.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(patches.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const auto batch = stack_pixels(patches, b, e);
      const auto recon = forward(model, batch, tape);
      const double loss = mse_loss(batch.data, recon.data);
      check_finite(loss, epoch);
      TensorF grad = recon;
      grad.data = mse_gradient(batch.data, recon.data);
      auto grads = zero_gradients(model);
      backward(model, tape, grad, grads);
      adam.step(model, grads);
      acc += loss;
      ++batches;
    }
    EpochRecord rec{epoch, -1, acc / batches, std::nullopt, 0.0};
    if (!monitor.empty()) rec.holdout_loss = reconstruction_eval(model, monitor, cfg.batch_size);
    rec.wallclock = seconds_since(t0);
    writer.write(rec);
    result.history.push_back(rec);
  }
  model.provenance.task = "reconstruction";
  model.provenance.loss_mode = "mse";
  model.provenance.epochs = cfg.epochs;
  model.provenance.seed = cfg.seed;
  model.provenance.fold = -1;
  result.model = std::move(model);
  return result;
}

ModelState transfer_pretrained(const ModelState& pretrained, const UNetConfig& target, Rng& rng) {
  if (!pretrained.config.transfer_compatible(target)) {
    const auto& a = pretrained.config;
    throw ValidationError("checkpoint config mismatch: checkpoint has levels=" + std::to_string(a.levels) +
                          " base=" + std::to_string(a.base_channels) + " max=" + std::to_string(a.max_channels) +
                          ", target has levels=" + std::to_string(target.levels) +
                          " base=" + std::to_string(target.base_channels) +
                          " max=" + std::to_string(target.max_channels));
  }
  auto model = build_unet<float>(target, rng);
  for (auto& param : model.params) {
    if (param.name.rfind("head.", 0) == 0) continue;
    const int src_index = pretrained.index_of(param.name);
    if (src_index < 0) throw ValidationError("pretrained checkpoint lacks tensor '" + param.name + "'");
    const auto& src = pretrained.params[static_cast<std::size_t>(src_index)];
    if (src.shape == param.shape) {
      param.value = src.value;
      continue;
    }
    // First decoder convolution: [cout, up + skip, 3, 3] <- [cout, up, 3, 3].
    const bool widened = param.shape.size() == 4 && src.shape.size() == 4 && param.shape[0] == src.shape[0] &&
                         param.shape[1] > src.shape[1] && param.shape[2] == 3;
    if (!widened) throw ValidationError("pretrained tensor '" + param.name + "' has an incompatible shape");
    const Eigen::Index cout = param.shape[0];
    const Eigen::Index dst_cols = static_cast<Eigen::Index>(param.shape[1]) * 9;
    const Eigen::Index src_cols = static_cast<Eigen::Index>(src.shape[1]) * 9;
    Eigen::Map<RowMatrix<float>> dst(param.value.data(), cout, dst_cols);
    dst.leftCols(src_cols) = Eigen::Map<const RowMatrix<float>>(src.value.data(), cout, src_cols);
  }
  model.provenance.pretrained = true;
  return model;
}

TrainResult fine_tune(const std::filesystem::path& pretrained, const DatasetManifest& manifest, int fold_id,
                      const UNetConfig& unet, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  unet.validate();
  const auto source = load_checkpoint(pretrained);
  Rng init(derive_seed(cfg.seed, "init"));
  auto model = transfer_pretrained(source, unet, init);
  const auto split = split_for_fold(manifest, fold_id, cfg);
  const auto train = load_labeled(manifest, split.train, cfg.sampler.included_classes);
  const auto holdout = load_labeled(manifest, split.holdout, cfg.sampler.included_classes);
  auto result = run_segmentation(std::move(model), train, holdout, cfg, fold_id, hooks);
  result.model.provenance.pretrained = true;
  return result;
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["fold"] = r.fold;
  j["train_loss"] = r.train_loss;
  j["holdout_loss"] = r.holdout_loss ? nlohmann::json(*r.holdout_loss) : nlohmann::json(nullptr);
  j["wallclock"] = r.wallclock;
  return j.dump();
}

}  // namespace fbseg
