#include "fbseg/evaluation.hpp"

#include <cstdio>
#include <sstream>

namespace fbseg {

std::vector<BundleInstance> connected_components(const Mask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw ValidationError("connectivity must be 4 or 8");
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(mask.size()), 0);
  std::vector<BundleInstance> out;
  std::vector<Eigen::Index> stack;
  for (Eigen::Index start = 0; start < mask.size(); ++start) {
    if (!mask.data()[start] || seen[start]) continue;
    BundleInstance comp;
    comp.component_id = static_cast<int>(out.size()) + 1;
    comp.bbox = {h, w, -1, -1};
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const Eigen::Index idx = stack.back();
      stack.pop_back();
      comp.pixels.push_back(idx);
      const int r = static_cast<int>(idx / w), c = static_cast<int>(idx % w);
      comp.bbox.r0 = std::min(comp.bbox.r0, r);
      comp.bbox.c0 = std::min(comp.bbox.c0, c);
      comp.bbox.r1 = std::max(comp.bbox.r1, r);
      comp.bbox.c1 = std::max(comp.bbox.c1, c);
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if ((dr == 0 && dc == 0) || (connectivity == 4 && dr != 0 && dc != 0)) continue;
          const int nr = r + dr, nc = c + dc;
          if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
          const Eigen::Index n = static_cast<Eigen::Index>(nr) * w + nc;
          if (mask.data()[n] && !seen[n]) {
            seen[n] = 1;
            stack.push_back(n);
          }
        }
    }
    std::sort(comp.pixels.begin(), comp.pixels.end());
    comp.pixel_count = static_cast<int>(comp.pixels.size());
    out.push_back(std::move(comp));
  }
  return out;
}

SectionEvalCounts evaluate_section(const Mask& pred, const Mask& gt_labels, const Mask& outline,
                                   const EvalOptions& opts, const std::string& section_id) {
  require_same_shape(pred, gt_labels, "evaluate_section " + section_id + " prediction vs labels");
  require_same_shape(pred, outline, "evaluate_section " + section_id + " prediction vs outline");
  validate_label_codes(gt_labels, "evaluate_section " + section_id);

  const Mask clipped = ((pred != 0) && (outline != 0)).cast<std::uint8_t>();
  Mask gt_fg = Mask::Zero(gt_labels.rows(), gt_labels.cols());
  for (Eigen::Index i = 0; i < gt_labels.size(); ++i) gt_fg.data()[i] = opts.included_classes.count(gt_labels.data()[i]) ? 1 : 0;

  SectionEvalCounts counts;
  counts.section_id = section_id;
  for (int code : opts.included_classes) {
    const auto cls = static_cast<BundleClass>(code);
    const Mask of_class = (gt_labels == static_cast<std::uint8_t>(code)).cast<std::uint8_t>();
    for (const auto& comp : connected_components(of_class, opts.connectivity)) {
      bool annotated = false, hit = false;
      for (auto idx : comp.pixels) {
        annotated = annotated || outline.data()[idx];
        hit = hit || clipped.data()[idx];
      }
      if (!annotated) continue;
      (hit ? counts.of(cls).tp : counts.of(cls).fn) += 1;
    }
  }
  for (const auto& comp : connected_components(clipped, opts.connectivity)) {
    bool hit = false;
    for (auto idx : comp.pixels) hit = hit || gt_fg.data()[idx];
    (hit ? counts.tp_pred : counts.fp_pred) += 1;
  }
  return counts;
}

std::optional<double> tpr_per_class(std::span<const SectionEvalCounts> counts, BundleClass c) {
  long tp = 0, fn = 0;
  for (const auto& s : counts) {
    tp += s.of(c).tp;
    fn += s.of(c).fn;
  }
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> fdr(std::span<const SectionEvalCounts> counts) {
  long tp = 0, fp = 0;
  for (const auto& s : counts) {
    tp += s.tp_pred;
    fp += s.fp_pred;
  }
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(fp) / static_cast<double>(tp + fp);
}

EvalReport build_report(std::vector<SectionEvalCounts> counts) {
  if (counts.empty()) throw ValidationError("build_report: no sections");
  EvalReport r;
  r.tpr_dense = tpr_per_class(counts, BundleClass::Dense);
  r.tpr_moderate = tpr_per_class(counts, BundleClass::Moderate);
  r.tpr_sparse = tpr_per_class(counts, BundleClass::Sparse);
  r.fdr = fdr(counts);
  long tp = 0, fp = 0;
  for (const auto& s : counts) {
    tp += s.tp_pred;
    fp += s.fp_pred;
  }
  r.n_sections = static_cast<int>(counts.size());
  r.tp_avg = static_cast<double>(tp) / r.n_sections;
  r.fp_avg = static_cast<double>(fp) / r.n_sections;
  r.per_section = std::move(counts);
  return r;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

constexpr std::array<BundleClass, 3> kClasses = {BundleClass::Dense, BundleClass::Moderate, BundleClass::Sparse};

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["tpr_dense"] = opt(r.tpr_dense);
  j["tpr_moderate"] = opt(r.tpr_moderate);
  j["tpr_sparse"] = opt(r.tpr_sparse);
  j["tp_avg"] = r.tp_avg;
  j["fp_avg"] = r.fp_avg;
  j["fdr"] = opt(r.fdr);
  j["n_sections"] = r.n_sections;
  j["per_section"] = nlohmann::json::array();
  for (const auto& s : r.per_section) {
    nlohmann::json e;
    e["section_id"] = s.section_id;
    for (auto c : kClasses) e[class_name(c)] = {{"tp", s.of(c).tp}, {"fn", s.of(c).fn}};
    e["tp_pred"] = s.tp_pred;
    e["fp_pred"] = s.fp_pred;
    j["per_section"].push_back(e);
  }
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.tpr_dense = opt_from(j.at("tpr_dense"));
  r.tpr_moderate = opt_from(j.at("tpr_moderate"));
  r.tpr_sparse = opt_from(j.at("tpr_sparse"));
  r.tp_avg = j.at("tp_avg").get<double>();
  r.fp_avg = j.at("fp_avg").get<double>();
  r.fdr = opt_from(j.at("fdr"));
  r.n_sections = j.at("n_sections").get<int>();
  for (const auto& e : j.at("per_section")) {
    SectionEvalCounts s;
    s.section_id = e.at("section_id").get<std::string>();
    for (auto c : kClasses) {
      s.of(c).tp = e.at(class_name(c)).at("tp").get<int>();
      s.of(c).fn = e.at(class_name(c)).at("fn").get<int>();
    }
    s.tp_pred = e.at("tp_pred").get<int>();
    s.fp_pred = e.at("fp_pred").get<int>();
    r.per_section.push_back(std::move(s));
  }
  return r;
}

std::string format_report_table(const EvalReport& r, const std::string& label) {
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return std::string(buf);
  };
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s | %-26s | %-6s | %-6s | %-5s\n", "Model", "TPR dense/moderate/sparse",
                "TP_avg", "FP_avg", "FDR");
  os << line;
  os << std::string(72, '-') << "\n";
  const std::string tpr = fmt(r.tpr_dense) + "/" + fmt(r.tpr_moderate) + "/" + fmt(r.tpr_sparse);
  std::snprintf(line, sizeof line, "%-16s | %-26s | %-6s | %-6s | %-5s\n", label.c_str(), tpr.c_str(),
                fmt(r.tp_avg).c_str(), fmt(r.fp_avg).c_str(), fmt(r.fdr).c_str());
  os << line;
  os << "(" << r.n_sections << " sections)\n";
  return os.str();
}

}  // namespace fbseg
