#pragma once

// Dirichlet evidential classification: evidence, belief masses,
// uncertainty and the two KL loss terms with their annealing schedule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "edl/autodiff.hpp"
#include "edl/ops.hpp"
#include "edl/special.hpp"

namespace edl {

inline constexpr double kLogitClip = 200.0;
/// softplus(200) + 1, the largest attainable Dirichlet parameter.
inline constexpr double kDefaultAlphaMax = 201.0;

struct DirichletBelief {
  std::vector<double> alpha;
  double strength = 0.0;  // S = Σ alpha_k
  std::vector<double> belief;
  double uncertainty = 1.0;
  std::vector<double> p_hat;

  std::size_t classes() const { return alpha.size(); }
};

class OneHotLabel {
 public:
  OneHotLabel(std::size_t index, std::size_t classes) : y_(classes, 0.0) {
    if (index >= classes) {
      throw ArgumentError("label " + std::to_string(index) + " out of range for " +
                          std::to_string(classes) + " classes");
    }
    y_[index] = 1.0;
  }

  explicit OneHotLabel(std::vector<double> y) : y_(std::move(y)) {
    std::size_t ones = 0;
    for (double v : y_) {
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw ArgumentError("one-hot label entries must be 0 or 1");
      }
    }
    if (ones != 1) throw ArgumentError("one-hot label must contain exactly one 1");
  }

  std::span<const double> values() const { return y_; }
  std::size_t classes() const { return y_.size(); }
  std::size_t index() const {
    return static_cast<std::size_t>(std::find(y_.begin(), y_.end(), 1.0) - y_.begin());
  }
  double operator[](std::size_t k) const { return y_[k]; }

 private:
  std::vector<double> y_;
};

/// a_t = min(1, t/s) with t the current epoch.
struct AnnealSchedule {
  int step = 10;
  int epoch = 0;

  double coefficient() const {
    if (step <= 0) throw ArgumentError("annealing step must be positive");
    if (epoch < 0) throw ArgumentError("epoch must be non-negative");
    return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(step));
  }
};

/// e = softplus(clip(logits, -200, 200)).
inline std::vector<double> evidence_from_logits(std::span<const double> logits) {
  if (logits.size() < 2) throw ArgumentError("need at least two classes");
  std::vector<double> e(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (!std::isfinite(logits[k])) {
      throw InvalidInputError("logit " + std::to_string(k) + " is not finite");
    }
    const double x = std::clamp(logits[k], -kLogitClip, kLogitClip);
    e[k] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  return e;
}

inline DirichletBelief belief(std::span<const double> evidence) {
  if (evidence.size() < 2) throw ArgumentError("need at least two classes");
  DirichletBelief b;
  const std::size_t k = evidence.size();
  b.alpha.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!(evidence[i] >= 0.0)) {
      throw DomainError("evidence must be non-negative, got e_" + std::to_string(i) +
                        " = " + std::to_string(evidence[i]));
    }
    b.alpha[i] = evidence[i] + 1.0;
    b.strength += b.alpha[i];
  }
  b.belief.resize(k);
  b.p_hat.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    b.belief[i] = evidence[i] / b.strength;
    b.p_hat[i] = b.alpha[i] / b.strength;
  }
  b.uncertainty = static_cast<double>(k) / b.strength;
  return b;
}

namespace detail {
inline void require_dirichlet(std::span<const double> a, const char* what) {
  for (double v : a) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError(std::string("kl_dirichlet: ") + what +
                        " parameters must be positive and finite, got " + std::to_string(v));
    }
  }
}
}  // namespace detail

/// KL(Dir(alpha) || Dir(beta)) in closed form.
inline double kl_dirichlet(std::span<const double> alpha, std::span<const double> beta) {
  if (alpha.size() != beta.size() || alpha.size() < 2) {
    throw DimensionError("kl_dirichlet: parameter vectors must have equal length >= 2");
  }
  detail::require_dirichlet(alpha, "alpha");
  detail::require_dirichlet(beta, "beta");
  double sa = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    sa += alpha[k];
    sb += beta[k];
  }
  const double psi_sa = special::digamma(sa);
  double kl = special::lgamma(sa) - special::lgamma(sb);
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    kl += special::lgamma(beta[k]) - special::lgamma(alpha[k]) +
          (alpha[k] - beta[k]) * (special::digamma(alpha[k]) - psi_sa);
  }
  return kl;
}

/// d KL(Dir(alpha) || Dir(beta)) / d alpha.
inline std::vector<double> kl_dirichlet_grad(std::span<const double> alpha,
                                             std::span<const double> beta) {
  if (alpha.size() != beta.size()) throw DimensionError("kl_dirichlet_grad: length mismatch");
  detail::require_dirichlet(alpha, "alpha");
  detail::require_dirichlet(beta, "beta");
  double sa = 0.0, diff = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    sa += alpha[k];
    diff += alpha[k] - beta[k];
  }
  const double tri_sa = special::trigamma(sa);
  std::vector<double> g(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    g[k] = (alpha[k] - beta[k]) * special::trigamma(alpha[k]) - tri_sa * diff;
  }
  return g;
}

/// Target parameters for the evidence term: alpha_max on the true class, 1
/// elsewhere.
inline std::vector<double> evidence_target(const OneHotLabel& y, double alpha_max) {
  if (!(alpha_max > 1.0)) throw ArgumentError("alpha_max must exceed 1");
  std::vector<double> t(y.classes(), 1.0);
  t[y.index()] = alpha_max;
  return t;
}

inline double loss_evid(const DirichletBelief& b, const OneHotLabel& y,
                        double alpha_max = kDefaultAlphaMax) {
  if (b.classes() != y.classes()) throw DimensionError("loss_evid: class count mismatch");
  return kl_dirichlet(b.alpha, evidence_target(y, alpha_max));
}

/// alpha_hat = y + (1 - y) ⊙ alpha: drops the true-class evidence.
inline std::vector<double> remove_non_misleading(std::span<const double> alpha,
                                                 const OneHotLabel& y) {
  if (alpha.size() != y.classes()) {
    throw DimensionError("remove_non_misleading: class count mismatch");
  }
  std::vector<double> out(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) out[k] = y[k] + (1.0 - y[k]) * alpha[k];
  return out;
}

inline double loss_unif(std::span<const double> alpha, const OneHotLabel& y) {
  const std::vector<double> ones(alpha.size(), 1.0);
  return kl_dirichlet(remove_non_misleading(alpha, y), ones);
}

struct LossValue {
  double evid = 0.0;   // batch mean of the evidence term
  double unif = 0.0;   // batch mean of the uniform term
  double total = 0.0;  // evid + a_t * unif
};

inline LossValue total_loss(std::span<const std::pair<DirichletBelief, OneHotLabel>> batch,
                            const AnnealSchedule& schedule,
                            double alpha_max = kDefaultAlphaMax) {
  if (batch.empty()) throw ArgumentError("total_loss: empty batch");
  const double a_t = schedule.coefficient();
  double evid = 0.0, unif = 0.0;
  for (const auto& [b, y] : batch) {
    evid += loss_evid(b, y, alpha_max);
    unif += loss_unif(b.alpha, y);
  }
  const double n = static_cast<double>(batch.size());
  LossValue v;
  v.evid = evid / n;
  v.unif = unif / n;
  v.total = v.evid + a_t * v.unif;
  return v;
}

// Tape-recorded versions used in training.
namespace ops {

/// Row-wise KL(Dir(alpha_i) || Dir(beta_i)) for alpha[N×K] and fixed
/// beta[N×K]; returns an N-vector.
inline Var kl_dirichlet_rows(Var alpha, Tensor beta) {
  const Shape& s = alpha.shape();
  if (s.size() != 2 || beta.shape() != s) {
    throw DimensionError("kl_dirichlet_rows: alpha and beta must both be N×K, got " +
                         shape_string(s) + " and " + shape_string(beta.shape()));
  }
  const std::size_t n = s[0], k = s[1];
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = kl_dirichlet(alpha.value().data().subspan(i * k, k), beta.data().subspan(i * k, k));
  }
  return alpha.tape->record(
      std::move(out), {alpha}, [beta = std::move(beta), n, k](Tape& t, std::size_t self) {
        const std::size_t ai = t.inputs(self)[0];
        if (!t.requires_grad(ai)) return;
        const Tensor& g = t.grad(self);
        const Tensor& a = t.value(ai);
        Tensor& ga = t.grad(ai);
        for (std::size_t i = 0; i < n; ++i) {
          const auto d = kl_dirichlet_grad(a.data().subspan(i * k, k), beta.data().subspan(i * k, k));
          for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += g[i] * d[j];
        }
      });
}

/// softplus(clip(logits, -200, 200)).
inline Var evidence(Var logits) {
  return edl::ops::softplus(edl::ops::clip(logits, -kLogitClip, kLogitClip));
}

struct LossVars {
  Var evid;   // scalar mean of the evidence term
  Var unif;   // scalar mean of the uniform term
  Var total;  // evid + a_t * unif
};

/// Batch loss from logits[N×K] and integer class labels.
inline LossVars evidential_loss(Var logits, std::span<const int> labels, double a_t,
                                double alpha_max = kDefaultAlphaMax) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw DimensionError("evidential_loss: logits " + shape_string(s) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (!(alpha_max > 1.0)) throw ArgumentError("alpha_max must exceed 1");
  const std::size_t n = s[0], k = s[1];
  Tensor target({n, k}, 1.0), keep({n, k}, 1.0), onehot({n, k}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || y >= k) throw ArgumentError("label out of range");
    target[i * k + y] = alpha_max;
    keep[i * k + y] = 0.0;
    onehot[i * k + y] = 1.0;
  }
  Tape& tape = *logits.tape;
  Var alpha = edl::ops::add_scalar(evidence(logits), 1.0);
  Var evid = edl::ops::mean(kl_dirichlet_rows(alpha, std::move(target)));
  Var alpha_hat = edl::ops::add(edl::ops::mul(alpha, tape.constant(std::move(keep))),
                                tape.constant(std::move(onehot)));
  Var unif = edl::ops::mean(kl_dirichlet_rows(alpha_hat, Tensor({n, k}, 1.0)));
  Var total = edl::ops::add(evid, edl::ops::scale(unif, a_t));
  return {evid, unif, total};
}

}  // namespace ops
}  // namespace edl
