#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "octlesion/metrics.hpp"
#include "octlesion/rng.hpp"
#include "oracles.hpp"

using namespace oct;
using namespace oct::metrics;

TEST_CASE("roc_auc fixtures") {
  std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  std::vector<int> l{1, 1, 0, 0};
  CHECK(roc_auc(s, l) == doctest::Approx(1.0));

  std::vector<double> equal{0.5, 0.5, 0.5, 0.5};
  CHECK(roc_auc(equal, l) == doctest::Approx(0.5));

  std::vector<double> s2{0.8, 0.2, 0.6, 0.1};
  CHECK(roc_auc(s2, l) == doctest::Approx(0.75));
}

TEST_CASE("roc_auc equals pair counting on random instances") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(40));
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      scores.push_back(rng.below(8) / 7.0);  // coarse grid forces ties
      labels.push_back(static_cast<int>(rng.below(2)));
    }
    labels[0] = 1;
    labels[1] = 0;
    CHECK(roc_auc(scores, labels) == doctest::Approx(oracle::auc_pair_counting(scores, labels)).epsilon(1e-12));
  }
}

TEST_CASE("roc_auc invariant under strictly increasing transforms") {
  Rng rng(7);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    scores.push_back(rng.uniform(-3.0, 3.0));
    labels.push_back(static_cast<int>(rng.below(2)));
  }
  labels[0] = 1;
  labels[1] = 0;
  std::vector<double> warped;
  for (double s : scores) warped.push_back(std::exp(2.0 * s) + 5.0);
  CHECK(roc_auc(scores, labels) == doctest::Approx(roc_auc(warped, labels)).epsilon(1e-12));
}

TEST_CASE("roc_auc rejects single-category labels") {
  std::vector<double> s{0.1, 0.2};
  std::vector<int> ones{1, 1};
  CHECK_THROWS(roc_auc(s, ones));
}

TEST_CASE("pr_auc fixtures") {
  std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  std::vector<int> l{1, 1, 0, 0};
  CHECK(pr_auc(s, l) == doctest::Approx(1.0));

  // one positive ranked last among n
  std::vector<double> s2{0.9, 0.8, 0.7, 0.1};
  std::vector<int> l2{0, 0, 0, 1};
  CHECK(pr_auc(s2, l2) == doctest::Approx(0.25));
}

TEST_CASE("pr_auc equals the exhaustive threshold sweep") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(30));
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      scores.push_back(rng.below(10) / 9.0);
      labels.push_back(static_cast<int>(rng.below(2)));
    }
    labels[0] = 1;
    CHECK(pr_auc(scores, labels) == doctest::Approx(oracle::ap_full_sweep(scores, labels)).epsilon(1e-12));
  }
}

TEST_CASE("confusion_at extremes and enumeration") {
  std::vector<double> s{0.9, 0.7, 0.4, 0.2};
  std::vector<int> l{1, 0, 1, 0};
  auto low = rates(confusion_at(s, l, 0.0));
  CHECK(low.sensitivity == doctest::Approx(1.0));
  CHECK(low.specificity == doctest::Approx(0.0));
  auto high = rates(confusion_at(s, l, 1.1));
  CHECK(high.sensitivity == doctest::Approx(0.0));
  CHECK(high.specificity == doctest::Approx(1.0));

  const auto cc = confusion_at(s, l, 0.5);
  CHECK(cc.tp == 1);  // 0.9
  CHECK(cc.fp == 1);  // 0.7
  CHECK(cc.fn == 1);  // 0.4
  CHECK(cc.tn == 1);  // 0.2
  CHECK(rates(cc).accuracy == doctest::Approx(0.5));
}

TEST_CASE("cohens_kappa fixtures") {
  std::vector<int> a{0, 1, 0, 1, 1};
  CHECK(cohens_kappa(a, a) == doctest::Approx(1.0));

  // confusion {actual A: 40 A, 10 B; actual B: 20 A, 30 B} -> kappa 0.4
  std::vector<int> pred, truth;
  for (int i = 0; i < 40; ++i) { pred.push_back(0); truth.push_back(0); }
  for (int i = 0; i < 10; ++i) { pred.push_back(1); truth.push_back(0); }
  for (int i = 0; i < 20; ++i) { pred.push_back(0); truth.push_back(1); }
  for (int i = 0; i < 30; ++i) { pred.push_back(1); truth.push_back(1); }
  CHECK(cohens_kappa(pred, truth) == doctest::Approx(0.4).epsilon(1e-9));

  // chance-level predictions with matched marginals drift to 0
  Rng rng(3);
  std::vector<int> p2, t2;
  for (int i = 0; i < 20000; ++i) {
    p2.push_back(static_cast<int>(rng.below(2)));
    t2.push_back(static_cast<int>(rng.below(2)));
  }
  CHECK(std::abs(cohens_kappa(p2, t2)) < 0.03);

  // degenerate marginals: everything one class
  std::vector<int> const_pred{1, 1, 1}, const_truth{1, 1, 1};
  const auto deg = cohens_kappa_ex(const_pred, const_truth);
  CHECK(deg.degenerate);
  CHECK(deg.value == doctest::Approx(1.0));
}

TEST_CASE("kappa equals direct formula on random multiclass instances") {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(50));
    std::vector<int> pred, truth;
    for (int i = 0; i < n; ++i) {
      pred.push_back(static_cast<int>(rng.below(3)));
      truth.push_back(static_cast<int>(rng.below(3)));
    }
    CHECK(cohens_kappa(pred, truth) == doctest::Approx(oracle::kappa_direct(pred, truth)).epsilon(1e-12));
  }
}

TEST_CASE("dice fixtures and symmetry") {
  Plane8 a(4, 8), b(4, 8);
  CHECK(dice(a, b, kDrusen) == doctest::Approx(1.0));  // both empty

  for (long i = 0; i < 4; ++i) a.v[static_cast<std::size_t>(i)] = kDrusen;
  for (long i = 0; i < 6; ++i) b.v[static_cast<std::size_t>(i + 2)] = kDrusen;
  // |A| = 4, |B| = 6, |A n B| = 2 -> 0.4
  CHECK(dice(a, b, kDrusen) == doctest::Approx(0.4));
  CHECK(dice(b, a, kDrusen) == doctest::Approx(dice(a, b, kDrusen)));
  CHECK(dice(a, a, kDrusen) == doctest::Approx(1.0));

  Plane8 c(4, 8), d(4, 8);
  c.v[0] = kRpd1;
  d.v[5] = kRpd1;
  CHECK(dice(c, d, kRpd1) == doctest::Approx(0.0));
}

TEST_CASE("connected components fixtures") {
  Plane8 p(5, 5);
  CHECK(connected_components(p).count == 0);

  p.at(2, 2) = 1;
  CHECK(connected_components(p).count == 1);

  Plane8 diag(4, 4);
  diag.at(1, 1) = 1;
  diag.at(2, 2) = 1;
  CHECK(connected_components(diag, Connectivity::eight).count == 1);
  CHECK(connected_components(diag, Connectivity::four).count == 2);
  CHECK(oracle::flood_fill_count(diag, true) == 1);
  CHECK(oracle::flood_fill_count(diag, false) == 2);
}

TEST_CASE("connected components match flood fill on random planes") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Plane8 p(6 + static_cast<long>(rng.below(10)), 6 + static_cast<long>(rng.below(10)));
    for (auto& v : p.v) v = rng.bernoulli(0.35) ? 1 : 0;
    CHECK(connected_components(p, Connectivity::eight).count == oracle::flood_fill_count(p, true));
    CHECK(connected_components(p, Connectivity::four).count == oracle::flood_fill_count(p, false));
  }
}

TEST_CASE("match_lesions fixtures") {
  Plane8 truth(8, 12), pred(8, 12);
  // two truth blobs
  truth.at(1, 1) = kDrusen;
  truth.at(1, 2) = kDrusen;
  truth.at(6, 8) = kDrusen;
  // prediction overlaps the first, plus a stray blob
  pred.at(1, 2) = kDrusen;
  pred.at(4, 4) = kDrusen;

  const auto m = match_lesions(pred, truth, kDrusen);
  CHECK(m.truth_components == 2);
  CHECK(m.detected == 1);
  CHECK(m.missed == 1);
  CHECK(m.false_positives == 1);

  const auto perfect = match_lesions(truth, truth, kDrusen);
  CHECK(perfect.detected == 2);
  CHECK(perfect.false_positives == 0);

  Plane8 empty(8, 12);
  const auto none = match_lesions(empty, truth, kDrusen);
  CHECK(none.detected == 0);
  CHECK(none.missed == 2);
  CHECK(none.false_positives == 0);
}

TEST_CASE("discretize_probs argmax and threshold behaviour") {
  ProbMap pm(4, 1, 3);
  // pixel 0: background dominant; pixel 1: drusen 0.6; pixel 2: rpd1 0.4 with bg 0.3
  double v[4][3] = {{0.7, 0.2, 0.3}, {0.1, 0.6, 0.2}, {0.1, 0.1, 0.4}, {0.1, 0.1, 0.1}};
  for (long ch = 0; ch < 4; ++ch)
    for (long c = 0; c < 3; ++c) pm.at(ch, 0, c) = v[ch][c];

  const Plane8 argmax = discretize_probs(pm, 0.0);
  CHECK(argmax.at(0, 0) == kBackground);
  CHECK(argmax.at(0, 1) == kDrusen);
  CHECK(argmax.at(0, 2) == kRpd1);

  const Plane8 strict = discretize_probs(pm, 0.5);
  CHECK(strict.at(0, 1) == kDrusen);   // 0.6 >= 0.5
  CHECK(strict.at(0, 2) == kBackground);  // 0.4 < 0.5

  // ties among lesion categories resolve to the lowest code
  ProbMap tie(4, 1, 1);
  tie.at(0, 0, 0) = 0.1;
  tie.at(1, 0, 0) = 0.45;
  tie.at(2, 0, 0) = 0.45;
  tie.at(3, 0, 0) = 0.0;
  CHECK(discretize_probs(tie, 0.0).at(0, 0) == kDrusen);
}

TEST_CASE("froc trivial points") {
  // one scan with a single-lesion truth and oracle probabilities
  ProbMap pm(4, 4, 4);
  Plane8 truth(4, 4);
  for (long r = 0; r < 4; ++r)
    for (long c = 0; c < 4; ++c) {
      const bool lesion = r == 1 && c == 1;
      if (lesion) truth.at(r, c) = kDrusen;
      pm.at(0, r, c) = lesion ? 0.0 : 1.0;
      pm.at(1, r, c) = lesion ? 1.0 : 0.0;
    }
  std::vector<ProbMap> maps{pm};
  std::vector<Plane8> truths{truth};
  const std::uint8_t codes[1] = {kDrusen};

  auto nothing = froc(maps, truths, codes, {1.01}, 50, 9);
  CHECK(nothing.size() == 1);
  CHECK(nothing[0].sensitivity == doctest::Approx(0.0));
  CHECK(nothing[0].avg_fp_per_scan == doctest::Approx(0.0));

  for (double t : {0.2, 0.5, 1.0}) {
    auto oracle_pt = froc(maps, truths, codes, {t}, 50, 9);
    CHECK(oracle_pt[0].sensitivity == doctest::Approx(1.0));
    CHECK(oracle_pt[0].avg_fp_per_scan == doctest::Approx(0.0));
    CHECK(oracle_pt[0].ci_low <= oracle_pt[0].sensitivity);
    CHECK(oracle_pt[0].ci_high >= oracle_pt[0].sensitivity);
  }
}

TEST_CASE("froc three-scan fixture matches hand enumeration") {
  // Scan 0: truth blob A detected at p=0.9; stray blob at p=0.6.
  // Scan 1: truth blob B detected at p=0.55 only.
  // Scan 2: no truth; stray blob at p=0.8.
  auto make_map = [](std::initializer_list<std::tuple<long, long, double>> lesions) {
    ProbMap pm(4, 6, 6);
    for (long i = 0; i < 36; ++i) pm.v[static_cast<std::size_t>(i)] = 1.0;  // background
    for (auto [r, c, p] : lesions) {
      pm.at(0, r, c) = 1.0 - p;
      pm.at(1, r, c) = p;
    }
    return pm;
  };
  std::vector<ProbMap> maps{make_map({{1, 1, 0.9}, {4, 4, 0.6}}), make_map({{2, 2, 0.55}}),
                            make_map({{3, 3, 0.8}})};
  std::vector<Plane8> truths(3, Plane8(6, 6));
  truths[0].at(1, 1) = kDrusen;
  truths[1].at(2, 2) = kDrusen;
  const std::uint8_t codes[1] = {kDrusen};

  const auto pts = froc(maps, truths, codes, {0.95, 0.85, 0.7, 0.58, 0.5}, 0, 1);
  // t=0.95
  CHECK(pts[0].sensitivity == doctest::Approx(0.0));
  CHECK(pts[0].avg_fp_per_scan == doctest::Approx(0.0));
  // t=0.85: blob A detected
  CHECK(pts[1].sensitivity == doctest::Approx(0.5));
  CHECK(pts[1].avg_fp_per_scan == doctest::Approx(0.0));
  // t=0.7: + stray at 0.8 -> 1 FP over 3 scans
  CHECK(pts[2].sensitivity == doctest::Approx(0.5));
  CHECK(pts[2].avg_fp_per_scan == doctest::Approx(1.0 / 3.0));
  // t=0.58: + stray at 0.6
  CHECK(pts[3].sensitivity == doctest::Approx(0.5));
  CHECK(pts[3].avg_fp_per_scan == doctest::Approx(2.0 / 3.0));
  // t=0.5: blob B detected
  CHECK(pts[4].sensitivity == doctest::Approx(1.0));
  CHECK(pts[4].avg_fp_per_scan == doctest::Approx(2.0 / 3.0));

  // monotone sweep property as the threshold decreases
  for (std::size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].sensitivity >= pts[i - 1].sensitivity);
    CHECK(pts[i].avg_fp_per_scan >= pts[i - 1].avg_fp_per_scan);
  }

  // bootstrap determinism and containment
  const auto b1 = froc(maps, truths, codes, {0.85, 0.3}, 500, 77);
  const auto b2 = froc(maps, truths, codes, {0.85, 0.3}, 500, 77);
  for (std::size_t i = 0; i < b1.size(); ++i) {
    CHECK(b1[i].ci_low == b2[i].ci_low);
    CHECK(b1[i].ci_high == b2[i].ci_high);
    CHECK(b1[i].ci_low <= b1[i].sensitivity);
    CHECK(b1[i].ci_high >= b1[i].sensitivity);
  }

  std::vector<Plane8> no_truth(3, Plane8(6, 6));
  CHECK_THROWS(froc(maps, no_truth, codes, {0.5}, 10, 1));
}

TEST_CASE("icc fixtures") {
  // identical rater columns with target variance
  Eigen::MatrixXd same(4, 3);
  same << 1, 1, 1, 2, 2, 2, 5, 5, 5, 9, 9, 9;
  const auto perfect = icc_absolute(same);
  CHECK(perfect.icc == doctest::Approx(1.0));
  CHECK(perfect.bin == IccBin::Excellent);

  // targets (1,2,3) vs (2,4,6): MSR 4.5, MSC 6, MSE 0.5 -> 0.4615
  Eigen::MatrixXd fixture(3, 2);
  fixture << 1, 2, 2, 4, 3, 6;
  const auto r = icc_absolute(fixture);
  CHECK(r.icc == doctest::Approx(6.0 / 13.0).epsilon(1e-9));
  CHECK(r.bin == IccBin::Poor);

  // degenerate: no variance anywhere
  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(3, 2, 4.0);
  const auto deg = icc_absolute(flat);
  CHECK(deg.degenerate);
  CHECK(deg.icc == doctest::Approx(0.0));
}

TEST_CASE("icc bins reproduce the interpretation scale") {
  CHECK(icc_bin(0.74) == IccBin::Moderate);
  CHECK(icc_bin(0.82) == IccBin::Good);
  CHECK(icc_bin(0.42) == IccBin::Poor);
  CHECK(icc_bin(0.49999) == IccBin::Poor);
  CHECK(icc_bin(0.50) == IccBin::Moderate);
  CHECK(icc_bin(0.74999) == IccBin::Moderate);
  CHECK(icc_bin(0.75) == IccBin::Good);
  CHECK(icc_bin(0.89999) == IccBin::Good);
  CHECK(icc_bin(0.90) == IccBin::Excellent);
}

TEST_CASE("icc matches the two-way ANOVA oracle on random matrices") {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(9));
    const int k = 2 + static_cast<int>(rng.below(4));
    std::vector<std::vector<double>> x(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(k)));
    Eigen::MatrixXd m(n, k);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const double v = rng.normal(10.0, 3.0) + 2.0 * i + 0.5 * j;
        x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
        m(i, j) = v;
      }
    CHECK(icc_absolute(m).icc == doctest::Approx(oracle::icc_two_way_anova(x)).epsilon(1e-9));
  }
}

TEST_CASE("icc confidence interval matches the published worked example") {
  // Shrout & Fleiss (1979) 6x4 ratings; ICC(A,1) = 0.29 with 95% CI
  // (0.019, 0.761) as reported by the reference implementations.
  Eigen::MatrixXd x(6, 4);
  x << 9, 2, 5, 8, 6, 1, 3, 2, 8, 4, 6, 8, 7, 1, 2, 6, 10, 5, 6, 9, 6, 2, 4, 7;
  const auto r = icc_absolute(x);
  CHECK(r.icc == doctest::Approx(0.2897637795275592).epsilon(1e-9));
  CHECK(r.ci_low == doctest::Approx(0.018786513374712).epsilon(1e-6));
  CHECK(r.ci_high == doctest::Approx(0.761084369648953).epsilon(1e-6));
}

TEST_CASE("f distribution helpers match frozen reference values") {
  CHECK(f_quantile(0.975, 2, 10) == doctest::Approx(5.456395525912731).epsilon(1e-9));
  CHECK(f_quantile(0.975, 5.3, 7.7) == doctest::Approx(4.8847608660582775).epsilon(1e-9));
  CHECK(f_quantile(0.975, 1, 1) == doctest::Approx(647.7890114778446).epsilon(1e-6));
  CHECK(f_quantile(0.975, 10, 3.2) == doctest::Approx(12.750051153149604).epsilon(1e-9));
  CHECK(f_quantile(0.975, 29, 29) == doctest::Approx(2.100995817284212).epsilon(1e-9));
  CHECK(f_cdf(f_quantile(0.9, 3.7, 11.2), 3.7, 11.2) == doctest::Approx(0.9).epsilon(1e-10));
}

TEST_CASE("agreement report composes per-pair ICCs") {
  Rng rng(41);
  const int n = 12;
  Eigen::VectorXd model(n);
  Eigen::MatrixXd graders(n, 3);
  for (int i = 0; i < n; ++i) {
    const double base = rng.uniform(0.0, 10.0);
    model(i) = base + rng.normal(0.0, 0.5);
    for (int g = 0; g < 3; ++g) graders(i, g) = base + rng.normal(0.0, 0.5);
  }
  const auto rep = agreement_report(model, graders);
  REQUIRE(rep.model_vs_grader.size() == 3);
  double mean = 0.0;
  for (int g = 0; g < 3; ++g) {
    Eigen::MatrixXd pair(n, 2);
    pair.col(0) = model;
    pair.col(1) = graders.col(g);
    CHECK(rep.model_vs_grader[static_cast<std::size_t>(g)].icc ==
          doctest::Approx(icc_absolute(pair).icc).epsilon(1e-12));
    mean += rep.model_vs_grader[static_cast<std::size_t>(g)].icc;
  }
  CHECK(rep.mean_model_icc == doctest::Approx(mean / 3.0).epsilon(1e-12));
  CHECK(rep.has_intergrader);
  CHECK(rep.intergrader.icc == doctest::Approx(icc_absolute(graders).icc).epsilon(1e-12));

  // model identical to every grader -> all ones
  Eigen::MatrixXd same_g(n, 2);
  Eigen::VectorXd tgt(n);
  for (int i = 0; i < n; ++i) tgt(i) = i + 1;
  same_g.col(0) = tgt;
  same_g.col(1) = tgt;
  const auto ones = agreement_report(tgt, same_g);
  CHECK(ones.model_vs_grader[0].icc == doctest::Approx(1.0));
  CHECK(ones.mean_model_icc == doctest::Approx(1.0));
}
