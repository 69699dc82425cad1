#ifndef FBSEG_CONFIG_HPP
#define FBSEG_CONFIG_HPP

// JSON forms of every configuration type. Parsing starts from the defaults,
// rejects unknown fields and wrong types, and names the offending field as a
// dotted path ("train.loss.focal_gamma").

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbseg/evaluation.hpp"
#include "fbseg/inference.hpp"
#include "fbseg/synthgen.hpp"
#include "fbseg/training.hpp"
#include "fbseg/unet.hpp"

namespace fbseg {

nlohmann::json to_json(const UNetConfig& c);
nlohmann::json to_json(const TrainingProvenance& p);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const SamplerConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const PretrainConfig& c);
nlohmann::json to_json(const InferenceConfig& c);
nlohmann::json to_json(const EvalOptions& c);
nlohmann::json to_json(const SynthSpec& s);
nlohmann::json to_json(const SynthDatasetConfig& c);

UNetConfig unet_config_from_json(const nlohmann::json& j, const std::string& path = "unet");
TrainingProvenance provenance_from_json(const nlohmann::json& j, const std::string& path = "provenance");
LossConfig loss_config_from_json(const nlohmann::json& j, const std::string& path = "loss");
SamplerConfig sampler_config_from_json(const nlohmann::json& j, const std::string& path = "sampler");
InferenceConfig inference_config_from_json(const nlohmann::json& j, const std::string& path = "inference");
SynthSpec synth_spec_from_json(const nlohmann::json& j, const std::string& path = "spec");
SynthDatasetConfig synth_dataset_from_json(const nlohmann::json& j, const std::string& path = "synth");

struct RunPaths {
  std::string manifest;
  std::string output_dir;
  bool operator==(const RunPaths&) const = default;
};

/// Everything one CLI invocation needs. The top-level seed and sampler are
/// copied into the training and pre-training configs by finalize(), so one
/// integer reproduces a run.
struct RunConfig {
  std::uint64_t seed = 0;
  RunPaths paths;
  UNetConfig unet;
  SamplerConfig sampler;
  TrainConfig train;        // train.sampler/seed are derived
  PretrainConfig pretrain;  // pretrain.sampler/seed are derived
  InferenceConfig inference;
  EvalOptions evaluation;
  SynthDatasetConfig synth;

  void finalize();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" to a JSON object, creating intermediate objects.
/// The value is parsed as JSON when it parses, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads the file (if any), applies overrides in order, parses, finalizes
/// and validates.
RunConfig load_run_config(const std::filesystem::path* file, const std::vector<std::string>& overrides);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace fbseg

#endif  // FBSEG_CONFIG_HPP
