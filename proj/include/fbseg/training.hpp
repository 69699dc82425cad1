#ifndef FBSEG_TRAINING_HPP
#define FBSEG_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbseg/losses.hpp"
#include "fbseg/sampling.hpp"
#include "fbseg/slide_io.hpp"
#include "fbseg/unet.hpp"

namespace fbseg {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 1000;
  int batch_size = 2;
  /// Batches whose gradients are averaged into one optimiser step.
  int accumulation_steps = 1;
  int folds = 5;
  LossConfig loss;
  SamplerConfig sampler;
  std::optional<std::string> pretrained_checkpoint;
  std::uint64_t seed = 0;
  /// Held-out-fold loss is evaluated every this many epochs (and on the last).
  int holdout_interval = 1;

  void validate() const;
};

struct PretrainConfig {
  int epochs = 200;
  double learning_rate = 1e-4;
  int batch_size = 2;
  /// Fixed, unaugmented patches per section whose reconstruction MSE is
  /// logged after every epoch (as holdout_loss); 0 disables.
  int monitor_patches_per_section = 2;
  /// foreground_fraction and included_classes are ignored; placement is uniform.
  SamplerConfig sampler;
  std::uint64_t seed = 0;

  void validate() const;
};

/// section_id -> fold index, for labeled train sections only.
using FoldAssignment = std::map<std::string, int>;

/// Brain-stratified assignment: each brain's sections are shuffled and dealt
/// round-robin, continuing the dealer position across brains so fold sizes
/// differ by at most one.
FoldAssignment make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed);

/// Uses the manifest's folds when every train entry has one, else make_folds.
FoldAssignment resolve_folds(const DatasetManifest& manifest, int k, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  int fold = -1;
  double train_loss = 0.0;
  std::optional<double> holdout_loss;
  double wallclock = 0.0;  // seconds since the run started
};

struct TrainResult {
  ModelState model;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  /// Newline-delimited JSON, one record per epoch.
  std::optional<std::filesystem::path> metrics_log;
  std::function<void(const EpochRecord&)> on_epoch;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains on every labeled train section outside fold_id; sections in
/// fold_id provide the held-out loss.
TrainResult train_fold(const DatasetManifest& manifest, int fold_id, const UNetConfig& unet, const TrainConfig& cfg,
                       const TrainHooks& hooks = {});

/// Reconstruction pre-training with skip connections disabled, on unlabeled
/// and train images. Label files are never opened.
TrainResult pretrain_reconstruction(const DatasetManifest& manifest, const UNetConfig& unet, const PretrainConfig& cfg,
                                    const TrainHooks& hooks = {});

/// Segmentation model initialised from a reconstruction checkpoint. Matching
/// encoder/decoder tensors are copied; skip-facing columns of the first
/// decoder convolutions and the output head are freshly initialised.
ModelState transfer_pretrained(const ModelState& pretrained, const UNetConfig& target, Rng& rng);

TrainResult fine_tune(const std::filesystem::path& pretrained, const DatasetManifest& manifest, int fold_id,
                      const UNetConfig& unet, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Metrics log line for one epoch.
std::string epoch_record_json(const EpochRecord& r);

}  // namespace fbseg

#endif  // FBSEG_TRAINING_HPP
