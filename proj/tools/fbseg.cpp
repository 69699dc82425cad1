// fbseg: fiber-bundle segmentation pipeline.
//
//   fbseg synth    --config run.json --out runs/demo
//   fbseg train    --config run.json --fold 0
//   fbseg infer    --config run.json --checkpoint runs/demo/checkpoints/fold0.ckpt
//   fbseg evaluate --config run.json
//
// Exit status: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "fbseg/config.hpp"
#include "fbseg/evaluation.hpp"
#include "fbseg/image_codec.hpp"
#include "fbseg/inference.hpp"
#include "fbseg/provenance.hpp"
#include "fbseg/render.hpp"
#include "fbseg/sampling.hpp"
#include "fbseg/slide_io.hpp"
#include "fbseg/synthgen.hpp"
#include "fbseg/training.hpp"

namespace fs = std::filesystem;
using namespace fbseg;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest;
};

// Which sections a command works on.
struct Selection {
  std::string split = "test";
  std::optional<int> fold;  // held-out sections of this training fold
  std::vector<std::string> sections;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration JSON")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Override a config field, e.g. --set train.epochs=5")->take_all();
  app->add_option("--seed", c.seed, "Master seed (overrides config)");
  app->add_option("--out", c.out, "Output directory (overrides paths.output_dir)");
  app->add_option("--manifest", c.manifest, "Dataset manifest (overrides paths.manifest)");
}

void add_selection(CLI::App* app, Selection& s) {
  app->add_option("--split", s.split, "Sections of this split (train|test|unlabeled)");
  app->add_option("--fold", s.fold, "Held-out sections of this training fold instead of a split");
  app->add_option("--sections", s.sections, "Explicit section ids")->delimiter(',');
}

RunConfig resolve(const Common& c, std::vector<std::string> extra = {}) {
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  if (!c.out.empty()) overrides.push_back("paths.output_dir=" + nlohmann::json(c.out).dump());
  if (!c.manifest.empty()) overrides.push_back("paths.manifest=" + nlohmann::json(c.manifest).dump());
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  const fs::path file = c.config;
  return load_run_config(c.config.empty() ? nullptr : &file, overrides);
}

fs::path output_dir(const RunConfig& cfg) {
  if (cfg.paths.output_dir.empty()) throw ValidationError("paths.output_dir is not set (use --out)");
  return cfg.paths.output_dir;
}

DatasetManifest manifest_of(const RunConfig& cfg) {
  if (cfg.paths.manifest.empty()) throw ValidationError("paths.manifest is not set (use --manifest)");
  if (!fs::exists(cfg.paths.manifest)) throw ValidationError("paths.manifest: no such file " + cfg.paths.manifest);
  return load_manifest(cfg.paths.manifest);
}

std::vector<const ManifestEntry*> select(const DatasetManifest& m, const RunConfig& cfg, const Selection& s) {
  std::vector<const ManifestEntry*> out;
  if (!s.sections.empty()) {
    for (const auto& id : s.sections) out.push_back(&m.find(id));
  } else if (s.fold) {
    const auto folds = resolve_folds(m, cfg.train.folds, cfg.seed);
    for (const auto* e : m.with_split(Split::Train))
      if (folds.at(e->section_id) == *s.fold) out.push_back(e);
  } else {
    out = m.with_split(parse_split(s.split));
  }
  if (out.empty()) throw ValidationError("no sections selected");
  return out;
}

std::vector<fs::path> section_files(const DatasetManifest& m, const std::vector<const ManifestEntry*>& entries,
                                    bool with_labels) {
  std::vector<fs::path> files;
  for (const auto* e : entries) {
    files.push_back(m.resolve(e->image_path));
    if (with_labels && e->label_path) files.push_back(m.resolve(*e->label_path));
    if (with_labels && e->outline_path) files.push_back(m.resolve(*e->outline_path));
  }
  return files;
}

void write_provenance(const fs::path& out, const std::string& command, const RunConfig& cfg,
                      std::vector<fs::path> inputs, const DatasetManifest* m) {
  if (m) inputs.insert(inputs.begin(), m->root / "manifest.json");
  std::vector<fs::path> existing;
  for (auto& p : inputs)
    if (fs::exists(p)) existing.push_back(p);
  write_json_file(out / "logs" / (command + "_provenance.json"),
                  provenance_record(command, to_json(cfg), existing, m ? m->root : fs::path()));
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Common& c) {
  const auto cfg = resolve(c);
  const auto m = manifest_of(cfg);
  std::vector<std::string> missing;
  for (const auto& e : m.entries) {
    for (const auto* p : {&e.label_path, &e.outline_path, &e.terminal_path})
      if (*p && !fs::exists(m.resolve(**p))) missing.push_back(e.section_id + ": " + **p);
    if (!fs::exists(m.resolve(e.image_path))) missing.push_back(e.section_id + ": " + e.image_path);
  }
  if (!missing.empty()) {
    std::string msg = "manifest references missing files:";
    for (const auto& f : missing) msg += "\n  " + f;
    throw ValidationError(msg);
  }
  std::map<std::string, std::map<Split, int>> counts;
  std::map<int, int> folds;
  int without_fold = 0;
  for (const auto& e : m.entries) {
    counts[e.brain_id][e.split] += 1;
    if (e.split == Split::Train) {
      if (e.fold)
        folds[*e.fold] += 1;
      else
        ++without_fold;
    }
  }
  std::printf("%-12s %6s %6s %10s %6s\n", "brain", "train", "test", "unlabeled", "total");
  std::map<Split, int> total;
  for (auto& [brain, per] : counts) {
    const int t = per[Split::Train] + per[Split::Test] + per[Split::Unlabeled];
    std::printf("%-12s %6d %6d %10d %6d\n", brain.c_str(), per[Split::Train], per[Split::Test], per[Split::Unlabeled], t);
    for (auto& [s, n] : per) total[s] += n;
  }
  std::printf("%-12s %6d %6d %10d %6zu\n", "all", total[Split::Train], total[Split::Test], total[Split::Unlabeled],
              m.entries.size());
  if (!folds.empty()) {
    std::printf("\nfold  sections\n");
    for (auto& [f, n] : folds) std::printf("%4d  %8d\n", f, n);
  }
  if (without_fold) std::printf("\n%d train sections without a fold (assigned at train time)\n", without_fold);
  return 0;
}

int cmd_synth(const Common& c, const std::string& spec_file) {
  std::vector<std::string> extra;
  if (!spec_file.empty()) extra.push_back("synth=" + read_json_file(spec_file).dump());
  const auto cfg = resolve(c, extra);
  const auto out = output_dir(cfg);
  const auto m = generate_dataset(cfg.synth, out / "data");
  write_provenance(out, "synth", cfg, spec_file.empty() ? std::vector<fs::path>{} : std::vector<fs::path>{spec_file},
                   nullptr);
  std::printf("wrote %zu sections to %s\n", m.entries.size(), (out / "data" / "manifest.json").c_str());
  return 0;
}

int cmd_sample_preview(const Common& c, const Selection& sel, int count) {
  const auto cfg = resolve(c);
  const auto m = manifest_of(cfg);
  Selection s = sel;
  if (s.sections.empty() && !s.fold && s.split == "test") s.split = "train";
  const auto entries = select(m, cfg, s);
  const auto out = output_dir(cfg) / "previews";
  fs::create_directories(out);
  int written = 0;
  for (const auto* e : entries) {
    if (written >= count) break;
    const auto loaded = load_section(m, *e);
    if (!loaded.labels) continue;
    const Mask target = binarize_labels(loaded.labels->labels, cfg.sampler.included_classes);
    Rng rng(derive_seed(cfg.seed, "preview/" + e->section_id));
    std::vector<std::string> warnings;
    auto patches = sample_patches(loaded.image, target, cfg.sampler, rng, &warnings);
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    for (auto& p : patches) {
      if (written >= count) break;
      p = augment(std::move(p), cfg.sampler.augment, rng);
      auto canvas = render::grayscale(p.pixels);
      render::fill(canvas, p.target, render::kDense, 0.25);
      render::draw_contours(canvas, p.target, render::kDense);
      char name[64];
      std::snprintf(name, sizeof name, "preview_%03d.png", written);
      write_png_rgb(out / name, canvas);
      std::printf("%s  %s @ (%d, %d)%s\n", name, p.section_id.c_str(), p.row, p.col,
                  p.guaranteed_foreground ? "  [foreground]" : "");
      ++written;
    }
  }
  if (written == 0) throw ValidationError("no labeled sections to preview");
  return 0;
}

TrainHooks progress_hooks(const fs::path& log) {
  TrainHooks h;
  h.metrics_log = log;
  h.on_epoch = [](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %4d  loss %.5f", r.epoch, r.train_loss);
    if (r.holdout_loss) std::fprintf(stderr, "  holdout %.5f", *r.holdout_loss);
    std::fprintf(stderr, "  %.1fs\n", r.wallclock);
  };
  return h;
}

int cmd_pretrain(const Common& c) {
  const auto cfg = resolve(c);
  const auto m = manifest_of(cfg);
  const auto out = output_dir(cfg);
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "logs");
  auto result = pretrain_reconstruction(m, cfg.unet, cfg.pretrain, progress_hooks(out / "logs" / "pretrain_metrics.jsonl"));
  const auto ckpt = out / "checkpoints" / "pretrain.ckpt";
  save_checkpoint(result.model, ckpt);
  auto inputs = section_files(m, m.with_split(Split::Unlabeled), false);
  const auto train_images = section_files(m, m.with_split(Split::Train), false);
  inputs.insert(inputs.end(), train_images.begin(), train_images.end());
  write_provenance(out, "pretrain", cfg, inputs, &m);
  std::printf("%s\n", ckpt.c_str());
  return 0;
}

int cmd_train(const Common& c, int fold, const std::string& pretrained) {
  std::vector<std::string> extra;
  if (!pretrained.empty()) extra.push_back("train.pretrained_checkpoint=" + nlohmann::json(pretrained).dump());
  const auto cfg = resolve(c, extra);
  if (fold < 0 || fold >= cfg.train.folds)
    throw ValidationError("--fold must be in [0, " + std::to_string(cfg.train.folds) + ")");
  if (cfg.train.pretrained_checkpoint && !fs::exists(*cfg.train.pretrained_checkpoint))
    throw ValidationError("train.pretrained_checkpoint: no such file " + *cfg.train.pretrained_checkpoint);
  const auto m = manifest_of(cfg);
  const auto out = output_dir(cfg);
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "logs");
  const std::string tag = "fold" + std::to_string(fold);
  auto result = train_fold(m, fold, cfg.unet, cfg.train, progress_hooks(out / "logs" / (tag + "_metrics.jsonl")));
  const auto ckpt = out / "checkpoints" / (tag + ".ckpt");
  save_checkpoint(result.model, ckpt);
  auto inputs = section_files(m, m.with_split(Split::Train), true);
  if (cfg.train.pretrained_checkpoint) inputs.push_back(*cfg.train.pretrained_checkpoint);
  write_provenance(out, "train_" + tag, cfg, inputs, &m);
  std::printf("%s\n", ckpt.c_str());
  return 0;
}

int cmd_infer(const Common& c, const Selection& sel, const std::vector<std::string>& checkpoints,
              const std::vector<std::string>& infer_flags) {
  std::vector<std::string> extra = infer_flags;
  if (!checkpoints.empty()) extra.push_back("inference.ensemble=" + nlohmann::json(checkpoints).dump());
  const auto cfg = resolve(c, extra);
  for (const auto& p : cfg.inference.ensemble)
    if (!fs::exists(p)) throw ValidationError("inference.ensemble: no such checkpoint " + p);
  const auto m = manifest_of(cfg);
  const auto entries = select(m, cfg, sel);
  const auto out = output_dir(cfg);
  fs::create_directories(out / "predictions");

  const auto models = load_ensemble(cfg.inference.ensemble);
  std::vector<const TileModel*> members;
  for (const auto& mm : models) members.push_back(mm.get());
  for (const auto* e : entries) {
    const auto loaded = load_section(m, *e, LabelPolicy::Skip);
    const auto probs = predict_section(cfg.inference, members, loaded.image);
    const Mask mask = postprocess(cfg.inference, probs);
    write_tiff_float(out / "predictions" / (e->section_id + "_prob.tif"), probs.probs);
    write_png_gray8(out / "predictions" / (e->section_id + "_mask.png"), (mask * 255).eval());
    auto canvas = render::grayscale(loaded.image.pixels);
    render::draw_contours(canvas, mask, render::kPrediction);
    write_png_rgb(out / "predictions" / (e->section_id + "_overlay.png"), canvas);
    std::printf("%s  %ld foreground px\n", e->section_id.c_str(), static_cast<long>((mask != 0).count()));
  }
  auto inputs = section_files(m, entries, false);
  for (const auto& p : cfg.inference.ensemble) inputs.push_back(p);
  write_provenance(out, "infer", cfg, inputs, &m);
  return 0;
}

int cmd_evaluate(const Common& c, const Selection& sel, bool overlays) {
  const auto cfg = resolve(c);
  const auto m = manifest_of(cfg);
  const auto entries = select(m, cfg, sel);
  const auto out = output_dir(cfg);

  std::vector<std::string> missing;
  for (const auto* e : entries) {
    if (!e->label_path) throw ValidationError("section '" + e->section_id + "' has no label mask to evaluate against");
    if (!fs::exists(out / "predictions" / (e->section_id + "_mask.png"))) missing.push_back(e->section_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("missing predictions for sections: " + list);
  }

  std::vector<SectionEvalCounts> counts;
  std::vector<fs::path> inputs;
  for (const auto* e : entries) {
    const auto loaded = load_section(m, *e);
    const auto pred_path = out / "predictions" / (e->section_id + "_mask.png");
    const Mask pred = (read_mask(pred_path) != 0).cast<std::uint8_t>();
    const Mask outline = loaded.outline_or_default().inside;
    counts.push_back(evaluate_section(pred, loaded.labels->labels, outline, cfg.evaluation, e->section_id));
    inputs.push_back(pred_path);
    if (overlays) {
      fs::create_directories(out / "reports" / "overlays");
      auto canvas = render::grayscale(loaded.image.pixels);
      const auto& gt = loaded.labels->labels;
      render::draw_contours(canvas, (gt == 1).cast<std::uint8_t>(), render::kDense);
      render::draw_contours(canvas, (gt == 2).cast<std::uint8_t>(), render::kModerate);
      render::draw_contours(canvas, (gt == 3).cast<std::uint8_t>(), render::kSparse);
      render::draw_contours(canvas, pred, render::kPrediction);
      render::draw_contours(canvas, outline, render::kOutline);
      write_png_rgb(out / "reports" / "overlays" / (e->section_id + "_eval.png"), canvas);
    }
  }
  const auto report = build_report(std::move(counts));
  write_json_file(out / "reports" / "eval_report.json", report_to_json(report));
  const auto table = format_report_table(report);
  {
    std::ofstream f(out / "reports" / "eval_table.txt", std::ios::trunc);
    f << table;
  }
  std::cout << table;
  auto all_inputs = section_files(m, entries, true);
  all_inputs.insert(all_inputs.end(), inputs.begin(), inputs.end());
  write_provenance(out, "evaluate", cfg, all_inputs, &m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fiber-bundle segmentation of tracer-injected histology sections"};
  app.require_subcommand(1);

  Common common;
  Selection selection;

  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and print section counts");
  add_common(ingest, common);

  std::string spec_file;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset under <out>/data");
  add_common(synth, common);
  synth->add_option("--spec", spec_file, "Synthetic dataset JSON (replaces the config's synth section)")
      ->check(CLI::ExistingFile);

  int preview_count = 8;
  auto* preview = app.add_subcommand("sample-preview", "Render sampled training patches with target overlays");
  add_common(preview, common);
  add_selection(preview, selection);
  preview->add_option("--count", preview_count, "Number of patches")->check(CLI::PositiveNumber);

  auto* pretrain = app.add_subcommand("pretrain", "Reconstruction pre-training on unlabeled and train images");
  add_common(pretrain, common);

  int fold = 0;
  std::string pretrained;
  auto* train = app.add_subcommand("train", "Train one cross-validation fold");
  add_common(train, common);
  train->add_option("--fold", fold, "Held-out fold index");
  train->add_option("--pretrained", pretrained, "Reconstruction checkpoint to fine-tune from");

  std::vector<std::string> checkpoints;
  std::vector<std::string> infer_flags;
  auto* infer = app.add_subcommand("infer", "Sliding-window prediction with a checkpoint ensemble");
  add_common(infer, common);
  add_selection(infer, selection);
  infer->add_option("--checkpoint", checkpoints, "Ensemble member (repeatable)");
  // Flags mirroring InferenceConfig; applied as overrides after --set.
  auto mirror = [&](const char* flag, const char* field, const char* help) {
    infer->add_option_function<std::string>(
        flag, [&infer_flags, field](const std::string& v) { infer_flags.push_back(std::string(field) + "=" + v); }, help);
  };
  mirror("--patch-size", "inference.patch_size", "Tile size in px");
  mirror("--stride-fraction", "inference.stride_fraction", "Stride as a fraction of the tile size");
  mirror("--sigma", "inference.gaussian_sigma_px", "Gaussian smoothing sigma in px");
  mirror("--threshold", "inference.threshold", "Probability threshold");
  mirror("--min-area", "inference.min_component_area_px", "Minimum component area in px");
  mirror("--connectivity", "inference.connectivity", "4 or 8");

  bool overlays = false;
  auto* evaluate = app.add_subcommand("evaluate", "Bundle-level TPR/FDR of predicted masks");
  add_common(evaluate, common);
  add_selection(evaluate, selection);
  evaluate->add_flag("--overlays", overlays, "Write GT/prediction overlay PNGs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*ingest) return cmd_ingest(common);
    if (*synth) return cmd_synth(common, spec_file);
    if (*preview) return cmd_sample_preview(common, selection, preview_count);
    if (*pretrain) return cmd_pretrain(common);
    if (*train) return cmd_train(common, fold, pretrained);
    if (*infer) return cmd_infer(common, selection, checkpoints, infer_flags);
    if (*evaluate) return cmd_evaluate(common, selection, overlays);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed: %s\n", e.what());
    return 2;
  }
  return 1;
}
