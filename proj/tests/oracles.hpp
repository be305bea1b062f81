#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "edl/tensor.hpp"

namespace edl::oracle {

/// Central differences of a scalar function wrt every element of x.
inline std::vector<double> numeric_gradient(const std::function<double(const Tensor&)>& f,
                                            Tensor x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||); 0 when both are zero.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

struct MonteCarloEstimate {
  double mean;
  double standard_error;
};

/// E_{p~Dir(alpha)}[ln Dir(p|alpha) − ln Dir(p|beta)] by sampling, with the
/// normalizers from std::lgamma.
inline MonteCarloEstimate monte_carlo_kl(std::span<const double> alpha,
                                         std::span<const double> beta, std::size_t samples,
                                         std::uint64_t seed) {
  const std::size_t k = alpha.size();
  double sa = 0.0, sb = 0.0, log_norm = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sa += alpha[i];
    sb += beta[i];
    log_norm += std::lgamma(beta[i]) - std::lgamma(alpha[i]);
  }
  log_norm += std::lgamma(sa) - std::lgamma(sb);

  std::mt19937_64 rng(seed);
  std::vector<std::gamma_distribution<double>> gammas;
  for (std::size_t i = 0; i < k; ++i) gammas.emplace_back(alpha[i], 1.0);
  std::vector<double> draw(k);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      draw[i] = gammas[i](rng);
      total += draw[i];
    }
    double v = log_norm;
    for (std::size_t i = 0; i < k; ++i) v += (alpha[i] - beta[i]) * std::log(draw[i] / total);
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

/// Mann–Whitney estimate of P(pos > neg) with ties counted 1/2.
inline double pairwise_auc(std::span<const double> pos, std::span<const double> neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct SweepPoint {
  double sensitivity;
  double specificity;
};

/// Every decision rule "score >= t" for t over the observed scores plus +inf.
inline std::vector<SweepPoint> threshold_sweep(std::span<const double> pos,
                                               std::span<const double> neg) {
  std::vector<double> cuts(pos.begin(), pos.end());
  cuts.insert(cuts.end(), neg.begin(), neg.end());
  cuts.push_back(INFINITY);
  std::vector<SweepPoint> out;
  for (double t : cuts) {
    double tp = 0, tn = 0;
    for (double p : pos) tp += p >= t;
    for (double n : neg) tn += n < t;
    out.push_back({tp / pos.size(), tn / neg.size()});
  }
  return out;
}

/// Partial AUC over FPR in [lo, hi] for untied scores: each negative, in
/// descending score order, owns an FPR slab of width 1/n_neg over which TPR
/// is the fraction of positives scoring above it.
inline double rectangle_partial_auc(std::span<const double> pos, std::span<const double> neg,
                                    double fpr_lo, double fpr_hi) {
  std::vector<double> sorted(neg.begin(), neg.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double w = 1.0 / static_cast<double>(sorted.size());
  double area = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    const double a = std::max(fpr_lo, j * w);
    const double b = std::min(fpr_hi, (j + 1) * w);
    if (b <= a) continue;
    double above = 0;
    for (double p : pos) above += p > sorted[j];
    area += (b - a) * above / static_cast<double>(pos.size());
  }
  return area / (fpr_hi - fpr_lo);
}

}  // namespace edl::oracle
