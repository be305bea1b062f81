#pragma once

// Screening metrics: ROC, AUC, partial AUC, sensitivity at fixed specificity,
// Cohen's kappa and operating-point selection.
//
// ROC convention: a score is called positive iff score > threshold. Points are
// ordered by strictly decreasing threshold; the first point uses the maximum
// score (nothing positive) and the last uses -inf (everything positive).
// Intermediate thresholds are midpoints between consecutive distinct scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "edl/error.hpp"

namespace edl {

struct RocPoint {
  double threshold;
  double sensitivity;
  double specificity;

  double fpr() const { return 1.0 - specificity; }
};

struct RocAnalysis {
  std::vector<RocPoint> points;
  double auc = 0.5;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

namespace detail {

inline void require_finite(std::span<const double> s, const char* what) {
  for (double v : s) {
    if (!std::isfinite(v)) throw ArgumentError(std::string("non-finite score in ") + what);
  }
}

}  // namespace detail

inline RocAnalysis roc(std::span<const double> scores_pos, std::span<const double> scores_neg) {
  if (scores_pos.empty() || scores_neg.empty()) {
    throw ArgumentError("roc needs at least one positive and one negative score");
  }
  detail::require_finite(scores_pos, "positives");
  detail::require_finite(scores_neg, "negatives");

  struct Scored {
    double score;
    bool positive;
  };
  std::vector<Scored> all;
  all.reserve(scores_pos.size() + scores_neg.size());
  for (double s : scores_pos) all.push_back({s, true});
  for (double s : scores_neg) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  RocAnalysis r;
  r.n_pos = scores_pos.size();
  r.n_neg = scores_neg.size();
  const double np = static_cast<double>(r.n_pos);
  const double nn = static_cast<double>(r.n_neg);

  std::size_t tp = 0, fp = 0;
  r.points.push_back({all.front().score, 0.0, 1.0});
  for (std::size_t i = 0; i < all.size();) {
    const double s = all[i].score;
    for (; i < all.size() && all[i].score == s; ++i) (all[i].positive ? tp : fp)++;
    double threshold = -std::numeric_limits<double>::infinity();
    if (i < all.size()) {
      const double next = all[i].score;
      threshold = next + (s - next) / 2.0;
      if (!(threshold > next && threshold < s)) threshold = next;
    }
    r.points.push_back({threshold, tp / np, static_cast<double>(r.n_neg - fp) / nn});
  }

  double area = 0.0;
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const auto& a = r.points[i - 1];
    const auto& b = r.points[i];
    area += (b.fpr() - a.fpr()) * (a.sensitivity + b.sensitivity) / 2.0;
  }
  r.auc = area;
  return r;
}

/// Area under the piecewise-linear ROC for specificity in [spec_lo, spec_hi],
/// divided by the interval width.
inline double partial_auc(const RocAnalysis& r, double spec_lo = 0.90, double spec_hi = 1.0) {
  if (!(spec_lo >= 0.0 && spec_lo < spec_hi && spec_hi <= 1.0)) {
    throw ArgumentError("partial_auc needs 0 <= spec_lo < spec_hi <= 1");
  }
  const double x_lo = 1.0 - spec_hi;
  const double x_hi = 1.0 - spec_lo;
  double area = 0.0;
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const double x0 = r.points[i - 1].fpr(), x1 = r.points[i].fpr();
    const double y0 = r.points[i - 1].sensitivity, y1 = r.points[i].sensitivity;
    const double a = std::max(x0, x_lo), b = std::min(x1, x_hi);
    if (!(b > a)) continue;
    const auto tpr_at = [&](double x) { return y0 + (y1 - y0) * (x - x0) / (x1 - x0); };
    area += (b - a) * (tpr_at(a) + tpr_at(b)) / 2.0;
  }
  return area / (x_hi - x_lo);
}

inline double tpr_at_specificity(const RocAnalysis& r, double spec = 0.95) {
  if (!(spec > 0.0 && spec < 1.0)) throw ArgumentError("specificity must lie in (0,1)");
  double best = 0.0;
  for (const auto& p : r.points) {
    if (p.specificity >= spec) best = std::max(best, p.sensitivity);
  }
  return best;
}

inline double cohens_kappa(std::span<const int> decisions, std::span<const int> reference) {
  if (decisions.size() != reference.size()) {
    throw ArgumentError("kappa needs equal-length inputs, got " + std::to_string(decisions.size()) +
                        " and " + std::to_string(reference.size()));
  }
  if (decisions.empty()) throw ArgumentError("kappa needs at least one pair");
  // Integer counts and a single division: kappa = (n*agree - E) / (n^2 - E)
  // with E = d1*r1 + (n-d1)*(n-r1) the chance-agreement numerator.
  const long long n = static_cast<long long>(decisions.size());
  long long agree = 0, d1 = 0, r1 = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if ((decisions[i] != 0 && decisions[i] != 1) || (reference[i] != 0 && reference[i] != 1)) {
      throw ArgumentError("kappa inputs must be 0 or 1");
    }
    agree += decisions[i] == reference[i];
    d1 += decisions[i];
    r1 += reference[i];
  }
  const long long chance = d1 * r1 + (n - d1) * (n - r1);
  if (chance == n * n) return agree == n ? 1.0 : 0.0;
  return static_cast<double>(n * agree - chance) / static_cast<double>(n * n - chance);
}

struct ThresholdRule {
  enum class Kind { at_sensitivity, youden_optimal };
  Kind kind = Kind::at_sensitivity;
  double target = 0.5;

  static ThresholdRule at_sensitivity(double x) { return {Kind::at_sensitivity, x}; }
  static ThresholdRule youden() { return {Kind::youden_optimal, 0.0}; }

  std::string name() const {
    if (kind == Kind::youden_optimal) return "youden";
    char buf[32];
    std::snprintf(buf, sizeof buf, "at_sensitivity_%g", target);
    return buf;
  }
};

struct OperatingPoint {
  double threshold;
  double sensitivity;
  double specificity;
  ThresholdRule rule;
};

inline OperatingPoint select_threshold(const RocAnalysis& r, ThresholdRule rule) {
  if (r.points.empty()) throw ArgumentError("empty ROC");
  const RocPoint* best = nullptr;
  if (rule.kind == ThresholdRule::Kind::at_sensitivity) {
    if (!(rule.target >= 0.0 && rule.target <= 1.0)) {
      throw ArgumentError("target sensitivity must lie in [0,1]");
    }
    for (const auto& p : r.points) {
      if (p.sensitivity < rule.target) continue;
      if (!best || p.sensitivity < best->sensitivity ||
          (p.sensitivity == best->sensitivity && p.specificity > best->specificity)) {
        best = &p;
      }
    }
  } else {
    for (const auto& p : r.points) {
      const double j = p.sensitivity + p.specificity - 1.0;
      const double jb = best ? best->sensitivity + best->specificity - 1.0 : 0.0;
      if (!best || j > jb || (j == jb && p.specificity > best->specificity) ||
          (j == jb && p.specificity == best->specificity && p.threshold < best->threshold)) {
        best = &p;
      }
    }
  }
  return {best->threshold, best->sensitivity, best->specificity, rule};
}

}  // namespace edl
