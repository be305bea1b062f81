#include "edl/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

namespace edl {
namespace {

std::vector<double> draw(std::mt19937_64& rng, std::size_t n, double shift, bool quantize) {
  std::normal_distribution<double> d(shift, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = quantize ? std::round(d(rng) * 4.0) / 4.0 : d(rng);
  return out;
}

TEST(Roc, Examples) {
  const std::vector<double> p1{0.9, 0.8}, n1{0.1, 0.2};
  EXPECT_DOUBLE_EQ(roc(p1, n1).auc, 1.0);
  const std::vector<double> same{0.3, 0.5, 0.5, 0.9};
  EXPECT_DOUBLE_EQ(roc(same, same).auc, 0.5);
  const std::vector<double> p2{0.8, 0.4}, n2{0.6, 0.2};
  EXPECT_DOUBLE_EQ(roc(p2, n2).auc, 0.75);
  EXPECT_DOUBLE_EQ(oracle::pairwise_auc(p2, n2), 0.75);
}

TEST(Roc, ArgumentErrors) {
  const std::vector<double> some{0.1}, none;
  EXPECT_THROW(roc(some, none), ArgumentError);
  EXPECT_THROW(roc(none, some), ArgumentError);
  const std::vector<double> bad{NAN};
  EXPECT_THROW(roc(bad, some), ArgumentError);
}

TEST(Roc, CurveInvariants) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pos = draw(rng, 1 + rng() % 30, 0.7, trial % 2);
    const auto neg = draw(rng, 1 + rng() % 30, 0.0, trial % 2);
    const auto r = roc(pos, neg);
    EXPECT_EQ(r.points.front().sensitivity, 0.0);
    EXPECT_EQ(r.points.front().specificity, 1.0);
    EXPECT_EQ(r.points.back().sensitivity, 1.0);
    EXPECT_EQ(r.points.back().specificity, 0.0);
    for (std::size_t i = 1; i < r.points.size(); ++i) {
      EXPECT_LT(r.points[i].threshold, r.points[i - 1].threshold);
      EXPECT_GE(r.points[i].sensitivity, r.points[i - 1].sensitivity);
    }
    // Each point is exactly what "score > threshold" yields.
    for (const auto& p : r.points) {
      double tp = 0, tn = 0;
      for (double s : pos) tp += s > p.threshold;
      for (double s : neg) tn += !(s > p.threshold);
      EXPECT_DOUBLE_EQ(p.sensitivity, tp / pos.size());
      EXPECT_DOUBLE_EQ(p.specificity, tn / neg.size());
    }
  }
}

TEST(Roc, TrapezoidMatchesMannWhitney) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pos = draw(rng, 1 + rng() % 60, 0.5, trial % 2);
    const auto neg = draw(rng, 1 + rng() % 60, 0.0, trial % 2);
    const auto r = roc(pos, neg);
    EXPECT_NEAR(r.auc, oracle::pairwise_auc(pos, neg), 1e-12);
    EXPECT_NEAR(partial_auc(r, 0.0, 1.0), r.auc, 1e-12);
  }
}

TEST(PartialAuc, Examples) {
  const std::vector<double> p{0.9, 0.8}, n{0.1, 0.2};
  EXPECT_DOUBLE_EQ(partial_auc(roc(p, n)), 1.0);

  RocAnalysis diagonal;
  diagonal.points = {{1.0, 0.0, 1.0}, {0.0, 1.0, 0.0}};
  EXPECT_NEAR(partial_auc(diagonal, 0.9, 1.0), 0.05, 1e-15);

  EXPECT_THROW(partial_auc(diagonal, 0.9, 0.9), ArgumentError);
  EXPECT_THROW(partial_auc(diagonal, -0.1, 0.5), ArgumentError);
  EXPECT_THROW(partial_auc(diagonal, 0.5, 1.1), ArgumentError);
}

TEST(PartialAuc, MatchesRectangleOracle) {
  const std::vector<double> pos{0.95, 0.91, 0.83, 0.77, 0.72, 0.64, 0.58, 0.44, 0.31, 0.12};
  const std::vector<double> neg{0.88, 0.69, 0.55, 0.49, 0.41, 0.36, 0.27, 0.19, 0.08, 0.03};
  const auto r = roc(pos, neg);
  EXPECT_NEAR(partial_auc(r, 0.9, 1.0), oracle::rectangle_partial_auc(pos, neg, 0.0, 0.1), 1e-12);
  EXPECT_NEAR(partial_auc(r, 0.75, 0.95), oracle::rectangle_partial_auc(pos, neg, 0.05, 0.25), 1e-12);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = draw(rng, 10 + rng() % 40, 1.0, false);
    const auto q = draw(rng, 10 + rng() % 40, 0.0, false);
    EXPECT_NEAR(partial_auc(roc(p, q)), oracle::rectangle_partial_auc(p, q, 0.0, 0.1), 1e-12);
  }
}

TEST(TprAtSpecificity, Examples) {
  const std::vector<double> p{0.9, 0.8}, n{0.1, 0.2};
  EXPECT_DOUBLE_EQ(tpr_at_specificity(roc(p, n)), 1.0);
  const std::vector<double> flat(5, 0.4);
  EXPECT_DOUBLE_EQ(tpr_at_specificity(roc(flat, flat)), 0.0);
  EXPECT_THROW(tpr_at_specificity(roc(p, n), 1.0), ArgumentError);
}

TEST(TprAtSpecificity, MatchesSweepOracle) {
  const std::vector<double> pos{0.97, 0.93, 0.90, 0.86, 0.71, 0.66, 0.52, 0.50, 0.33, 0.21};
  const std::vector<double> neg{0.91, 0.62, 0.60, 0.45, 0.40, 0.38, 0.30, 0.22, 0.15, 0.05};
  auto check = [](const std::vector<double>& p, const std::vector<double>& n, double spec) {
    double expected = 0.0;
    for (const auto& s : oracle::threshold_sweep(p, n))
      if (s.specificity >= spec) expected = std::max(expected, s.sensitivity);
    EXPECT_DOUBLE_EQ(tpr_at_specificity(roc(p, n), spec), expected);
  };
  check(pos, neg, 0.95);
  check(pos, neg, 0.9);
  EXPECT_DOUBLE_EQ(tpr_at_specificity(roc(pos, neg), 0.95), 0.2);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    check(draw(rng, 1 + rng() % 40, 1.0, trial % 2), draw(rng, 1 + rng() % 40, 0.0, trial % 2), 0.95);
  }
}

TEST(Kappa, Examples) {
  const std::vector<int> mixed{0, 1, 1, 0, 1};
  EXPECT_DOUBLE_EQ(cohens_kappa(mixed, mixed), 1.0);

  std::vector<int> d, r;
  auto add = [&](int dv, int rv, int count) {
    for (int i = 0; i < count; ++i) d.push_back(dv), r.push_back(rv);
  };
  add(1, 1, 40);
  add(1, 0, 10);
  add(0, 1, 10);
  add(0, 0, 40);
  EXPECT_NEAR(cohens_kappa(d, r), 0.6, 1e-15);

  const std::vector<int> all_neg(10, 0);
  const std::vector<int> balanced{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(cohens_kappa(all_neg, balanced), 0.0);
  EXPECT_DOUBLE_EQ(cohens_kappa(all_neg, all_neg), 1.0);

  const std::vector<int> short_list{0, 1};
  EXPECT_THROW(cohens_kappa(short_list, balanced), ArgumentError);
}

TEST(Kappa, SymmetricAndSelfAgreement) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 50;
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = rng() % 2, b[i] = rng() % 2;
    a[0] = 0;
    a[1] = 1;
    EXPECT_DOUBLE_EQ(cohens_kappa(a, b), cohens_kappa(b, a));
    EXPECT_DOUBLE_EQ(cohens_kappa(a, a), 1.0);
  }
}

TEST(SelectThreshold, PerfectSeparation) {
  const std::vector<double> p{0.9, 0.8}, n{0.1, 0.2};
  const auto op = select_threshold(roc(p, n), ThresholdRule::youden());
  EXPECT_EQ(op.sensitivity, 1.0);
  EXPECT_EQ(op.specificity, 1.0);
  EXPECT_GT(op.threshold, 0.2);
  EXPECT_LT(op.threshold, 0.8);
}

TEST(SelectThreshold, AtSensitivityCoversTopTwoPositives) {
  const std::vector<double> p{0.9, 0.7, 0.5, 0.3}, n{0.8, 0.6, 0.4, 0.2};
  const auto op = select_threshold(roc(p, n), ThresholdRule::at_sensitivity(0.5));
  EXPECT_EQ(op.sensitivity, 0.5);
  // Highest specificity among points covering exactly 0.9 and 0.7.
  EXPECT_EQ(op.specificity, 0.75);
  for (double s : p) EXPECT_EQ(s > op.threshold, s >= 0.7);
  for (double s : n) EXPECT_EQ(s > op.threshold, s >= 0.8);
}

TEST(SelectThreshold, YoudenMatchesExhaustiveSweep) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = draw(rng, 1 + rng() % 40, 0.8, trial % 2);
    const auto n = draw(rng, 1 + rng() % 40, 0.0, trial % 2);
    double best_j = -2.0, best_spec = -1.0;
    for (const auto& s : oracle::threshold_sweep(p, n)) {
      const double j = s.sensitivity + s.specificity - 1.0;
      if (j > best_j || (j == best_j && s.specificity > best_spec)) best_j = j, best_spec = s.specificity;
    }
    const auto op = select_threshold(roc(p, n), ThresholdRule::youden());
    EXPECT_DOUBLE_EQ(op.sensitivity + op.specificity - 1.0, best_j);
    EXPECT_DOUBLE_EQ(op.specificity, best_spec);
  }
}

TEST(Metrics, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = draw(rng, 5 + rng() % 30, 0.6, trial % 2);
    const auto n = draw(rng, 5 + rng() % 30, 0.0, trial % 2);
    std::vector<double> tp, tn;
    for (double v : p) tp.push_back(std::exp(v) * 3.0 + 1.0);
    for (double v : n) tn.push_back(std::exp(v) * 3.0 + 1.0);
    const auto a = roc(p, n), b = roc(tp, tn);
    EXPECT_DOUBLE_EQ(a.auc, b.auc);
    EXPECT_DOUBLE_EQ(partial_auc(a), partial_auc(b));
    EXPECT_DOUBLE_EQ(tpr_at_specificity(a), tpr_at_specificity(b));
    for (auto rule : {ThresholdRule::youden(), ThresholdRule::at_sensitivity(0.5)}) {
      const auto oa = select_threshold(a, rule), ob = select_threshold(b, rule);
      EXPECT_EQ(oa.sensitivity, ob.sensitivity);
      EXPECT_EQ(oa.specificity, ob.specificity);
    }
  }
}

}  // namespace
}  // namespace edl
