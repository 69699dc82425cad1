#include "fbseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fbseg {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw ValidationError("config field '" + path + "': " + why);
}

template <typename T>
struct Convert;

template <>
struct Convert<bool> {
  static bool from(const json& v, const std::string& p) {
    if (!v.is_boolean()) fail(p, "expected a boolean");
    return v.get<bool>();
  }
};

template <>
struct Convert<int> {
  static int from(const json& v, const std::string& p) {
    if (!v.is_number_integer()) fail(p, "expected an integer");
    return v.get<int>();
  }
};

template <>
struct Convert<std::uint64_t> {
  static std::uint64_t from(const json& v, const std::string& p) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) fail(p, "expected a non-negative integer");
    fail(p, "expected an integer");
  }
};

template <>
struct Convert<double> {
  static double from(const json& v, const std::string& p) {
    if (!v.is_number()) fail(p, "expected a number");
    return v.get<double>();
  }
};

template <>
struct Convert<std::string> {
  static std::string from(const json& v, const std::string& p) {
    if (!v.is_string()) fail(p, "expected a string");
    return v.get<std::string>();
  }
};

template <typename T>
struct Convert<std::optional<T>> {
  static std::optional<T> from(const json& v, const std::string& p) {
    if (v.is_null()) return std::nullopt;
    return Convert<T>::from(v, p);
  }
};

template <typename T>
struct Convert<std::vector<T>> {
  static std::vector<T> from(const json& v, const std::string& p) {
    if (!v.is_array()) fail(p, "expected an array");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(Convert<T>::from(v[i], p + "[" + std::to_string(i) + "]"));
    return out;
  }
};

template <>
struct Convert<ClassSet> {
  static ClassSet from(const json& v, const std::string& p) {
    const auto list = Convert<std::vector<int>>::from(v, p);
    return ClassSet(list.begin(), list.end());
  }
};

template <>
struct Convert<Range> {
  static Range from(const json& v, const std::string& p) {
    if (!v.is_array() || v.size() != 2) fail(p, "expected [lo, hi]");
    return {Convert<double>::from(v[0], p + "[0]"), Convert<double>::from(v[1], p + "[1]")};
  }
};

// Object reader: tracks consumed keys so leftovers can be reported.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) out = Convert<T>::from(*it, at(key));
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get_per_class(const std::string& key, PerClass<T>& out) {
    if (const json* v = sub(key)) {
      Fields f(*v, at(key));
      for (int i = 0; i < kNumBundleClasses; ++i) f.get(class_name(static_cast<BundleClass>(i + 1)), out[i]);
      f.finish();
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail(at(key), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

template <typename T, typename F>
json per_class_json(const PerClass<T>& v, F&& conv) {
  json j;
  for (int i = 0; i < kNumBundleClasses; ++i) j[class_name(static_cast<BundleClass>(i + 1))] = conv(v[i]);
  return j;
}

json class_set_json(const ClassSet& s) { return json(std::vector<int>(s.begin(), s.end())); }

const char* normalization_name(Normalization n) { return n == Normalization::Instance ? "instance" : "none"; }

Normalization parse_normalization(const std::string& s, const std::string& path) {
  if (s == "none") return Normalization::None;
  if (s == "instance") return Normalization::Instance;
  fail(path, "expected 'none' or 'instance'");
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  TrainConfig c;
  Fields f(j, path);
  f.get("learning_rate", c.learning_rate);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("folds", c.folds);
  if (const json* v = f.sub("loss")) c.loss = loss_config_from_json(*v, f.at("loss"));
  f.get("pretrained_checkpoint", c.pretrained_checkpoint);
  f.get("holdout_interval", c.holdout_interval);
  f.get("accumulation_steps", c.accumulation_steps);
  f.finish();
  return c;
}

PretrainConfig pretrain_config_from_json(const json& j, const std::string& path) {
  PretrainConfig c;
  Fields f(j, path);
  f.get("epochs", c.epochs);
  f.get("learning_rate", c.learning_rate);
  f.get("batch_size", c.batch_size);
  f.get("monitor_patches_per_section", c.monitor_patches_per_section);
  f.finish();
  return c;
}

EvalOptions eval_options_from_json(const json& j, const std::string& path) {
  EvalOptions c;
  Fields f(j, path);
  f.get("included_classes", c.included_classes);
  f.get("connectivity", c.connectivity);
  f.finish();
  return c;
}

}  // namespace

json to_json(const UNetConfig& c) {
  return {{"levels", c.levels},
          {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},
          {"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"activation", c.activation},
          {"skip_connections", c.skip_connections},
          {"normalization", normalization_name(c.normalization)}};
}

UNetConfig unet_config_from_json(const json& j, const std::string& path) {
  UNetConfig c;
  Fields f(j, path);
  f.get("levels", c.levels);
  f.get("base_channels", c.base_channels);
  f.get("max_channels", c.max_channels);
  f.get("in_channels", c.in_channels);
  f.get("out_channels", c.out_channels);
  f.get("activation", c.activation);
  f.get("skip_connections", c.skip_connections);
  std::string norm = normalization_name(c.normalization);
  f.get("normalization", norm);
  c.normalization = parse_normalization(norm, f.at("normalization"));
  f.finish();
  return c;
}

json to_json(const TrainingProvenance& p) {
  return {{"task", p.task},     {"loss_mode", p.loss_mode},   {"epochs", p.epochs},
          {"seed", p.seed},     {"pretrained", p.pretrained}, {"fold", p.fold}};
}

TrainingProvenance provenance_from_json(const json& j, const std::string& path) {
  TrainingProvenance p;
  Fields f(j, path);
  f.get("task", p.task);
  f.get("loss_mode", p.loss_mode);
  f.get("epochs", p.epochs);
  f.get("seed", p.seed);
  f.get("pretrained", p.pretrained);
  f.get("fold", p.fold);
  f.finish();
  return p;
}

json to_json(const LossConfig& c) {
  return {{"mode", loss_mode_name(c.mode)},
          {"focal_alpha", c.focal_alpha},
          {"focal_gamma", c.focal_gamma},
          {"dice_epsilon", c.dice_epsilon},
          {"dice_smooth_numerator", c.dice_smooth_numerator},
          {"probability_clamp", c.probability_clamp}};
}

LossConfig loss_config_from_json(const json& j, const std::string& path) {
  LossConfig c;
  Fields f(j, path);
  std::string mode = loss_mode_name(c.mode);
  f.get("mode", mode);
  try {
    c.mode = parse_loss_mode(mode);
  } catch (const ValidationError& e) {
    fail(f.at("mode"), e.what());
  }
  f.get("focal_alpha", c.focal_alpha);
  f.get("focal_gamma", c.focal_gamma);
  f.get("dice_epsilon", c.dice_epsilon);
  f.get("dice_smooth_numerator", c.dice_smooth_numerator);
  f.get("probability_clamp", c.probability_clamp);
  f.finish();
  return c;
}

json to_json(const SamplerConfig& c) {
  const auto& a = c.augment;
  return {{"patch_size", c.patch_size},
          {"patches_per_section", c.patches_per_section},
          {"foreground_fraction", c.foreground_fraction},
          {"included_classes", class_set_json(c.included_classes)},
          {"augment",
           {{"hflip_probability", a.hflip_probability},
            {"vflip_probability", a.vflip_probability},
            {"elastic",
             {{"probability", a.elastic.probability},
              {"grid", a.elastic.grid},
              {"max_displacement_px", a.elastic.max_displacement_px}}}}}};
}

SamplerConfig sampler_config_from_json(const json& j, const std::string& path) {
  SamplerConfig c;
  Fields f(j, path);
  f.get("patch_size", c.patch_size);
  f.get("patches_per_section", c.patches_per_section);
  f.get("foreground_fraction", c.foreground_fraction);
  f.get("included_classes", c.included_classes);
  if (const json* v = f.sub("augment")) {
    Fields a(*v, f.at("augment"));
    a.get("hflip_probability", c.augment.hflip_probability);
    a.get("vflip_probability", c.augment.vflip_probability);
    if (const json* e = a.sub("elastic")) {
      Fields el(*e, a.at("elastic"));
      el.get("probability", c.augment.elastic.probability);
      el.get("grid", c.augment.elastic.grid);
      el.get("max_displacement_px", c.augment.elastic.max_displacement_px);
      el.finish();
    }
    a.finish();
  }
  f.finish();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"folds", c.folds},
          {"loss", to_json(c.loss)},
          {"pretrained_checkpoint", c.pretrained_checkpoint ? json(*c.pretrained_checkpoint) : json(nullptr)},
          {"holdout_interval", c.holdout_interval},
          {"accumulation_steps", c.accumulation_steps}};
}

json to_json(const PretrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"monitor_patches_per_section", c.monitor_patches_per_section}};
}

json to_json(const InferenceConfig& c) {
  return {{"patch_size", c.patch_size},
          {"stride_fraction", c.stride_fraction},
          {"ensemble", c.ensemble},
          {"gaussian_sigma_px", c.gaussian_sigma_px},
          {"threshold", c.threshold},
          {"min_component_area_px", c.min_component_area_px},
          {"connectivity", c.connectivity}};
}

InferenceConfig inference_config_from_json(const json& j, const std::string& path) {
  InferenceConfig c;
  Fields f(j, path);
  f.get("patch_size", c.patch_size);
  f.get("stride_fraction", c.stride_fraction);
  f.get("ensemble", c.ensemble);
  f.get("gaussian_sigma_px", c.gaussian_sigma_px);
  f.get("threshold", c.threshold);
  f.get("min_component_area_px", c.min_component_area_px);
  f.get("connectivity", c.connectivity);
  f.finish();
  return c;
}

json to_json(const EvalOptions& c) {
  return {{"included_classes", class_set_json(c.included_classes)}, {"connectivity", c.connectivity}};
}

json to_json(const SynthSpec& s) {
  auto id = [](auto v) { return v; };
  return {{"canvas", {{"height", s.height}, {"width", s.width}}},
          {"n_bundles_per_class", per_class_json(s.n_bundles, id)},
          {"n_terminal_fields", s.n_terminal_fields},
          {"background_noise", {{"mean", s.noise_mean}, {"std", s.noise_std}}},
          {"bundle_geometry",
           {{"width_px", per_class_json(s.width_px, range_json)},
            {"streak_density", per_class_json(s.streak_density, id)},
            {"length_px", range_json(s.length_px)},
            {"outside_length_px", range_json(s.outside_length_px)},
            {"curvature", range_json(s.curvature)},
            {"streak_length_px", range_json(s.streak_length_px)},
            {"streak_intensity", s.streak_intensity}}},
          {"terminal_fields", {{"radius_px", range_json(s.terminal_radius_px)}, {"intensity", s.terminal_intensity}}},
          {"outline", {{"coverage", s.outline_coverage}, {"outside_fraction", s.outside_fraction}}},
          {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const json& j, const std::string& path) {
  SynthSpec s;
  Fields f(j, path);
  if (const json* v = f.sub("canvas")) {
    Fields c(*v, f.at("canvas"));
    c.get("height", s.height);
    c.get("width", s.width);
    c.finish();
  }
  f.get_per_class("n_bundles_per_class", s.n_bundles);
  f.get("n_terminal_fields", s.n_terminal_fields);
  if (const json* v = f.sub("background_noise")) {
    Fields n(*v, f.at("background_noise"));
    n.get("mean", s.noise_mean);
    n.get("std", s.noise_std);
    n.finish();
  }
  if (const json* v = f.sub("bundle_geometry")) {
    Fields g(*v, f.at("bundle_geometry"));
    g.get_per_class("width_px", s.width_px);
    g.get_per_class("streak_density", s.streak_density);
    g.get("length_px", s.length_px);
    g.get("outside_length_px", s.outside_length_px);
    g.get("curvature", s.curvature);
    g.get("streak_length_px", s.streak_length_px);
    g.get("streak_intensity", s.streak_intensity);
    g.finish();
  }
  if (const json* v = f.sub("terminal_fields")) {
    Fields t(*v, f.at("terminal_fields"));
    t.get("radius_px", s.terminal_radius_px);
    t.get("intensity", s.terminal_intensity);
    t.finish();
  }
  if (const json* v = f.sub("outline")) {
    Fields o(*v, f.at("outline"));
    o.get("coverage", s.outline_coverage);
    o.get("outside_fraction", s.outside_fraction);
    o.finish();
  }
  f.get("seed", s.seed);
  f.finish();
  return s;
}

json to_json(const SynthDatasetConfig& c) {
  json spec = to_json(c.spec);
  spec.erase("seed");
  json splits = nullptr;
  if (c.splits) splits = {{"train", c.splits->train}, {"test", c.splits->test}, {"unlabeled", c.splits->unlabeled}};
  return {{"spec", spec},
          {"n_sections", c.n_sections},
          {"splits", splits},
          {"folds", c.folds ? json(*c.folds) : json(nullptr)}};
}

SynthDatasetConfig synth_dataset_from_json(const json& j, const std::string& path) {
  SynthDatasetConfig c;
  Fields f(j, path);
  if (const json* v = f.sub("spec")) c.spec = synth_spec_from_json(*v, f.at("spec"));
  f.get("n_sections", c.n_sections);
  if (const json* v = f.sub("splits"); v && !v->is_null()) {
    Fields s(*v, f.at("splits"));
    SplitCounts counts;
    s.get("train", counts.train);
    s.get("test", counts.test);
    s.get("unlabeled", counts.unlabeled);
    s.finish();
    c.splits = counts;
  }
  f.get("folds", c.folds);
  f.finish();
  return c;
}

void RunConfig::finalize() {
  train.sampler = sampler;
  train.seed = seed;
  pretrain.sampler = sampler;
  pretrain.seed = seed;
  synth.seed = seed;
  synth.spec.seed = seed;
}

void RunConfig::validate() const {
  unet.validate();
  sampler.validate();
  train.validate();
  pretrain.validate();
  inference.validate();
  synth.validate();
  if (evaluation.connectivity != 4 && evaluation.connectivity != 8)
    throw ValidationError("evaluation.connectivity must be 4 or 8");
  for (int c : evaluation.included_classes)
    if (c < 1 || c > 3) throw ValidationError("evaluation.included_classes must be a subset of {1, 2, 3}");
  if (sampler.patch_size % unet.divisor() != 0)
    throw ValidationError("sampler.patch_size " + std::to_string(sampler.patch_size) + " must be divisible by " +
                          std::to_string(unet.divisor()) + " (2^(unet.levels - 1))");
  if (inference.patch_size % unet.divisor() != 0)
    throw ValidationError("inference.patch_size " + std::to_string(inference.patch_size) + " must be divisible by " +
                          std::to_string(unet.divisor()) + " (2^(unet.levels - 1))");
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"paths", {{"manifest", c.paths.manifest}, {"output_dir", c.paths.output_dir}}},
          {"unet", to_json(c.unet)},
          {"sampler", to_json(c.sampler)},
          {"train", to_json(c.train)},
          {"pretrain", to_json(c.pretrain)},
          {"inference", to_json(c.inference)},
          {"evaluation", to_json(c.evaluation)},
          {"synth", to_json(c.synth)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Fields f(j, "");
  f.get("seed", c.seed);
  if (const json* v = f.sub("paths")) {
    Fields p(*v, "paths");
    p.get("manifest", c.paths.manifest);
    p.get("output_dir", c.paths.output_dir);
    p.finish();
  }
  if (const json* v = f.sub("unet")) c.unet = unet_config_from_json(*v, "unet");
  if (const json* v = f.sub("sampler")) c.sampler = sampler_config_from_json(*v, "sampler");
  if (const json* v = f.sub("train")) c.train = train_config_from_json(*v, "train");
  if (const json* v = f.sub("pretrain")) c.pretrain = pretrain_config_from_json(*v, "pretrain");
  if (const json* v = f.sub("inference")) c.inference = inference_config_from_json(*v, "inference");
  if (const json* v = f.sub("evaluation")) c.evaluation = eval_options_from_json(*v, "evaluation");
  if (const json* v = f.sub("synth")) c.synth = synth_dataset_from_json(*v, "synth");
  f.finish();
  c.finalize();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ValidationError("override '" + key + "': '" + part + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open " + path.string());
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ValidationError(path.string() + " is not valid JSON");
  return j;
}

RunConfig load_run_config(const std::filesystem::path* file, const std::vector<std::string>& overrides) {
  json j = file ? read_json_file(*file) : json::object();
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = run_config_from_json(j);
  c.validate();
  return c;
}

}  // namespace fbseg
