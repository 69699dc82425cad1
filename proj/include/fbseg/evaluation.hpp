#ifndef FBSEG_EVALUATION_HPP
#define FBSEG_EVALUATION_HPP

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbseg/image.hpp"
#include "fbseg/sampling.hpp"
#include "fbseg/slide_io.hpp"

namespace fbseg {

struct BoundingBox {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;  // inclusive
};

struct BundleInstance {
  int component_id = 0;
  int pixel_count = 0;
  BoundingBox bbox;
  std::optional<BundleClass> class_code;  // set for ground truth only
  std::vector<Eigen::Index> pixels;       // row-major linear indices
};

/// Maximal connected sets of nonzero pixels. Components are numbered in
/// row-major order of their first pixel.
std::vector<BundleInstance> connected_components(const Mask& mask, int connectivity = 8);

struct ClassCounts {
  int tp = 0;
  int fn = 0;
  bool operator==(const ClassCounts&) const = default;
};

struct SectionEvalCounts {
  std::string section_id;
  std::array<ClassCounts, kNumBundleClasses> per_class;  // dense, moderate, sparse
  int tp_pred = 0;
  int fp_pred = 0;

  ClassCounts& of(BundleClass c) { return per_class[static_cast<int>(c) - 1]; }
  const ClassCounts& of(BundleClass c) const { return per_class[static_cast<int>(c) - 1]; }
  bool operator==(const SectionEvalCounts&) const = default;
};

struct EvalOptions {
  ClassSet included_classes = {1, 2, 3};
  int connectivity = 8;
};

/// Bundle-level matching for one section.
///
/// Predictions are clipped to the outline before component analysis, so a
/// component outside it contributes nothing. Ground-truth components are
/// extracted per class; those with no pixel inside the outline are not
/// annotated territory and are skipped. A ground-truth component is a TP for
/// its class if any pixel touches the clipped prediction, else FN. A
/// predicted component is TP if any pixel touches ground-truth foreground of
/// an included class, else FP. One-pixel overlap suffices in both directions.
SectionEvalCounts evaluate_section(const Mask& pred, const Mask& gt_labels, const Mask& outline,
                                   const EvalOptions& opts = {}, const std::string& section_id = {});

/// sum tp / (sum tp + sum fn); nullopt when there are no bundles of the class.
std::optional<double> tpr_per_class(std::span<const SectionEvalCounts> counts, BundleClass c);

/// sum fp / (sum tp + sum fp) over predicted components; nullopt with no predictions.
std::optional<double> fdr(std::span<const SectionEvalCounts> counts);

struct EvalReport {
  std::optional<double> tpr_dense, tpr_moderate, tpr_sparse;
  double tp_avg = 0.0;
  double fp_avg = 0.0;
  std::optional<double> fdr;
  int n_sections = 0;
  std::vector<SectionEvalCounts> per_section;

  bool operator==(const EvalReport&) const = default;
};

EvalReport build_report(std::vector<SectionEvalCounts> counts);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Plain-text table: TPR dense/moderate/sparse, TP_avg, FP_avg, FDR.
std::string format_report_table(const EvalReport& report, const std::string& label = "model");

}  // namespace fbseg

#endif  // FBSEG_EVALUATION_HPP
