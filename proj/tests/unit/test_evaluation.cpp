#include <doctest.h>

#include "../oracle/brute_matcher.hpp"
#include "fbseg/evaluation.hpp"
#include "fbseg/rng.hpp"
#include "test_util.hpp"

using namespace fbseg;

namespace {

bool same(const SectionEvalCounts& a, const oracle::BruteCounts& b) {
  for (int c = 0; c < 3; ++c)
    if (a.per_class[c].tp != b.tp[c] || a.per_class[c].fn != b.fn[c]) return false;
  return a.tp_pred == b.tp_pred && a.fp_pred == b.fp_pred;
}

SectionEvalCounts counts(int tp_pred, int fp_pred) {
  SectionEvalCounts s;
  s.tp_pred = tp_pred;
  s.fp_pred = fp_pred;
  return s;
}

}  // namespace

TEST_CASE("connected components") {
  const Mask diag = test::mask_from({{1, 0}, {0, 1}});
  CHECK(connected_components(diag, 8).size() == 1);
  CHECK(connected_components(diag, 4).size() == 2);
  CHECK(connected_components(Mask::Zero(5, 5)).empty());

  const Mask m = test::mask_from({{0, 0, 1, 1}, {1, 0, 0, 1}, {1, 0, 0, 0}});
  const auto comps = connected_components(m);
  REQUIRE(comps.size() == 2);
  // Row-major discovery: the component touching (0, 2) comes first.
  CHECK(comps[0].pixels.front() == 2);
  CHECK(comps[0].pixel_count == 3);
  CHECK(comps[1].bbox.r0 == 1);
  CHECK(comps[1].bbox.r1 == 2);
  CHECK_THROWS_AS(connected_components(m, 6), ValidationError);
}

TEST_CASE("evaluate_section examples") {
  const Mask all_in = Mask::Ones(16, 16);
  Mask gt = Mask::Zero(16, 16);
  gt.block(2, 2, 4, 6).setConstant(1);

  auto perfect = evaluate_section((gt != 0).cast<std::uint8_t>(), gt, all_in);
  CHECK(perfect.of(BundleClass::Dense).tp == 1);
  CHECK(perfect.of(BundleClass::Dense).fn == 0);
  CHECK(perfect.tp_pred == 1);
  CHECK(perfect.fp_pred == 0);

  // A predicted component fully outside the outline counts for nothing.
  Mask outline = Mask::Ones(16, 16);
  outline.rightCols(4).setZero();
  Mask pred = (gt != 0).cast<std::uint8_t>();
  pred.block(10, 13, 3, 3).setOnes();
  const auto clipped = evaluate_section(pred, gt, outline);
  CHECK(clipped.tp_pred == 1);
  CHECK(clipped.fp_pred == 0);

  // 1 dense + 1 sparse bundle; the prediction touches only the dense one.
  gt.block(10, 2, 2, 8).setConstant(3);
  Mask p2 = Mask::Zero(16, 16);
  p2.block(4, 6, 5, 3).setOnes();  // overlaps the dense block's corner only
  const auto r = evaluate_section(p2, gt, all_in);
  CHECK(r.of(BundleClass::Dense).tp == 1);
  CHECK(r.of(BundleClass::Sparse).fn == 1);
  CHECK(r.tp_pred == 1);
  CHECK(r.fp_pred == 0);
  CHECK(same(r, oracle::brute_match(p2, gt, all_in, {1, 2, 3})));

  CHECK_THROWS_AS(evaluate_section(Mask::Zero(4, 4), Mask::Zero(4, 5), Mask::Ones(4, 4)), ValidationError);
}

TEST_CASE("one prediction over two GT bundles counts once") {
  Mask gt = Mask::Zero(8, 8);
  gt.block(0, 0, 2, 2).setConstant(1);
  gt.block(0, 5, 2, 2).setConstant(2);
  Mask pred = Mask::Zero(8, 8);
  pred.row(1).setOnes();
  const auto r = evaluate_section(pred, gt, Mask::Ones(8, 8));
  CHECK(r.tp_pred == 1);
  CHECK(r.of(BundleClass::Dense).tp == 1);
  CHECK(r.of(BundleClass::Moderate).tp == 1);
}

TEST_CASE("touching bundles of different classes stay distinct") {
  Mask gt = Mask::Zero(6, 6);
  gt.block(0, 0, 3, 3).setConstant(1);
  gt.block(0, 3, 3, 3).setConstant(2);
  Mask pred = Mask::Zero(6, 6);
  pred(1, 1) = 1;
  const auto r = evaluate_section(pred, gt, Mask::Ones(6, 6));
  CHECK(r.of(BundleClass::Dense).tp == 1);
  CHECK(r.of(BundleClass::Moderate).fn == 1);
}

TEST_CASE("GT bundles outside the outline are not counted") {
  Mask gt = Mask::Zero(8, 8);
  gt.block(0, 0, 2, 2).setConstant(1);
  gt.block(6, 6, 2, 2).setConstant(1);
  Mask outline = Mask::Zero(8, 8);
  outline.topLeftCorner(4, 4).setOnes();
  const auto r = evaluate_section(Mask::Zero(8, 8), gt, outline);
  CHECK(r.of(BundleClass::Dense).fn == 1);
  CHECK(r.of(BundleClass::Dense).tp == 0);
}

TEST_CASE("random masks agree with the brute-force matcher") {
  Rng rng(77);
  for (int t = 0; t < 200; ++t) {
    Mask pred(9, 11), gt(9, 11), outline(9, 11);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      pred.data()[i] = rng.bernoulli(0.35);
      gt.data()[i] = rng.bernoulli(0.4) ? static_cast<std::uint8_t>(rng.uniform_int(1, 3)) : 0;
      outline.data()[i] = rng.bernoulli(0.8);
    }
    const std::set<int> classes = t % 2 ? std::set<int>{1, 2, 3} : std::set<int>{1, 2};
    EvalOptions opts{classes, t % 3 ? 8 : 4};
    CHECK(same(evaluate_section(pred, gt, outline, opts), oracle::brute_match(pred, gt, outline, classes, opts.connectivity)));
  }
}

TEST_CASE("monotonicity and outline exclusion properties") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    Mask gt = Mask::Zero(20, 20), pred = Mask::Zero(20, 20);
    gt.block(2, 2, 3, 3).setConstant(1);
    gt.block(12, 12, 4, 2).setConstant(2);
    for (Eigen::Index i = 0; i < pred.size(); ++i) pred.data()[i] = rng.bernoulli(0.05);
    Mask outline = Mask::Ones(20, 20);
    outline.block(0, 0, 20, static_cast<int>(rng.uniform_int(0, 10))).setZero();

    const auto base = evaluate_section(pred, gt, Mask::Ones(20, 20));
    const auto with_outline = evaluate_section(pred, gt, outline);
    CHECK(with_outline.fp_pred <= base.fp_pred);

    // A lone component in a cleared corner adds exactly one FP.
    Mask p = pred;
    p.block(15, 0, 5, 5).setZero();
    const auto clean = evaluate_section(p, gt, Mask::Ones(20, 20));
    p(19, 0) = 1;
    const auto fp_added = evaluate_section(p, gt, Mask::Ones(20, 20));
    CHECK(fp_added.fp_pred == clean.fp_pred + 1);
    CHECK(fp_added.tp_pred == clean.tp_pred);

    // A new component on a GT bundle never lowers tp_pred.
    Mask q = pred;
    q.block(0, 0, 7, 7).setZero();
    const auto q0 = evaluate_section(q, gt, Mask::Ones(20, 20));
    q(3, 3) = 1;
    const auto q1 = evaluate_section(q, gt, Mask::Ones(20, 20));
    CHECK(q1.tp_pred == q0.tp_pred + 1);
    CHECK(q1.fp_pred == q0.fp_pred);
  }
}

TEST_CASE("tpr and fdr") {
  std::vector<SectionEvalCounts> v(2);
  v[0].of(BundleClass::Dense) = {2, 1};
  v[1].of(BundleClass::Dense) = {1, 0};
  CHECK(*tpr_per_class(v, BundleClass::Dense) == doctest::Approx(0.75));
  CHECK_FALSE(tpr_per_class(v, BundleClass::Sparse));
  v[0].of(BundleClass::Sparse) = {49, 51};
  CHECK(*tpr_per_class(v, BundleClass::Sparse) == doctest::Approx(0.49));

  const std::vector<SectionEvalCounts> f = {counts(81, 19)};
  CHECK(*fdr(f) == doctest::Approx(0.19));
  CHECK(*fdr(std::vector<SectionEvalCounts>{counts(5, 0)}) == 0.0);
  CHECK_FALSE(fdr(std::vector<SectionEvalCounts>{counts(0, 0)}));
}

TEST_CASE("report") {
  const auto r = build_report({counts(3, 1), counts(1, 1)});
  CHECK(r.tp_avg == doctest::Approx(2.0));
  CHECK(r.fp_avg == doctest::Approx(1.0));
  CHECK(*r.fdr == doctest::Approx(2.0 / 6));
  CHECK(report_from_json(report_to_json(r)) == r);
  CHECK_THROWS_AS(build_report({}), ValidationError);

  SectionEvalCounts perfect = counts(2, 0);
  perfect.of(BundleClass::Dense) = {1, 0};
  perfect.of(BundleClass::Sparse) = {1, 0};
  const auto p = build_report({perfect});
  CHECK(*p.fdr == 0.0);
  CHECK(*p.tpr_dense == 1.0);
  CHECK(*p.tpr_sparse == 1.0);
  CHECK_FALSE(p.tpr_moderate);
  CHECK(report_from_json(report_to_json(p)) == p);
  CHECK(format_report_table(p).find("1.00/n/a/1.00") != std::string::npos);
}

TEST_CASE("TPR is invariant to section order") {
  std::vector<SectionEvalCounts> v(3);
  v[0].of(BundleClass::Moderate) = {1, 2};
  v[1].of(BundleClass::Moderate) = {4, 0};
  v[2].of(BundleClass::Moderate) = {0, 3};
  const auto a = *tpr_per_class(v, BundleClass::Moderate);
  std::swap(v[0], v[2]);
  CHECK(*tpr_per_class(v, BundleClass::Moderate) == a);
}
