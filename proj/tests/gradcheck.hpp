#pragma once

// Finite-difference gradient checks shared by the unit and acceptance suites.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "edl/autodiff.hpp"
#include "edl/ops.hpp"
#include "oracles.hpp"

namespace edl::oracle {

using OpFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Scalarizes op(inputs) as Σ w ⊙ op(inputs) with fixed random weights and
// returns the worst relative error between tape and finite-difference
// gradients across all inputs.
inline double gradient_error(const OpFn& op, const std::vector<Tensor>& inputs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor weights;
  auto scalarize = [&](Tape& tape, const std::vector<Var>& vars) {
    Var out = op(tape, vars);
    if (weights.empty()) weights = random_tensor(out.shape(), rng);
    return ops::sum(ops::mul(out, tape.constant(weights)));
  };

  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  tape.backward(scalarize(tape, vars));

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Tensor& xi) {
      Tape t2;
      std::vector<Var> v2;
      for (std::size_t j = 0; j < inputs.size(); ++j) v2.push_back(t2.constant(j == i ? xi : inputs[j]));
      return scalarize(t2, v2).value()[0];
    };
    const auto numeric = numeric_gradient(f, inputs[i]);
    worst = std::max(worst, relative_error(vars[i].grad().data(), numeric));
  }
  return worst;
}

// Values with |x - kink| >= margin for every kink.
inline Tensor away_from(std::vector<double> kinks, Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t = random_tensor(std::move(shape), rng, lo, hi);
  for (double& v : t.data()) {
    for (double k : kinks) {
      if (std::abs(v - k) < 1e-3) v = k + (v < k ? -0.05 : 0.05);
    }
  }
  return t;
}

}  // namespace edl::oracle
