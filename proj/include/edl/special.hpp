#pragma once

// Log-gamma, digamma and trigamma for positive real arguments.
//
// Each shifts the argument upward with the exact recurrence until it is at
// least kAsymptoticStart, then evaluates the Stirling / asymptotic series.
// With the series truncated as below the truncation error at the start point
// is far below double rounding.

#include <cmath>
#include <numbers>

#include "edl/error.hpp"

namespace edl::special {

inline constexpr double kAsymptoticStart = 15.0;

namespace detail {
inline void require_positive(double x, const char* fn) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(fn) + ": argument must be positive and finite, got " +
                      std::to_string(x));
  }
}
}  // namespace detail

inline double lgamma(double x) {
  detail::require_positive(x, "lgamma");
  double shift = 0.0;
  if (x < kAsymptoticStart) {
    // ln Γ(x) = ln Γ(x + n) − ln(x (x+1) ... (x+n−1))
    double prod = 1.0;
    while (x < kAsymptoticStart) {
      prod *= x;
      x += 1.0;
    }
    shift = std::log(prod);
  }
  const double z2 = 1.0 / (x * x);
  // B_2k / (2k (2k−1)) for k = 1..8
  const double series =
      (1.0 / 12.0 +
       z2 * (-1.0 / 360.0 +
             z2 * (1.0 / 1260.0 +
                   z2 * (-1.0 / 1680.0 +
                         z2 * (1.0 / 1188.0 +
                               z2 * (-691.0 / 360360.0 +
                                     z2 * (1.0 / 156.0 + z2 * (-3617.0 / 122400.0)))))))) /
      x;
  constexpr double half_log_two_pi = 0.91893853320467274178032973640562;
  return (x - 0.5) * std::log(x) - x + half_log_two_pi + series - shift;
}

inline double digamma(double x) {
  detail::require_positive(x, "digamma");
  double acc = 0.0;
  while (x < kAsymptoticStart) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double z2 = 1.0 / (x * x);
  // B_2k / (2k z^2k) for k = 1..7
  const double series =
      z2 * (1.0 / 12.0 +
            z2 * (-1.0 / 120.0 +
                  z2 * (1.0 / 252.0 +
                        z2 * (-1.0 / 240.0 +
                              z2 * (1.0 / 132.0 + z2 * (-691.0 / 32760.0 + z2 * (1.0 / 12.0)))))));
  return acc + std::log(x) - 0.5 / x - series;
}

inline double trigamma(double x) {
  detail::require_positive(x, "trigamma");
  double acc = 0.0;
  while (x < kAsymptoticStart) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double z = 1.0 / x;
  const double z2 = z * z;
  // 1/z + 1/(2z²) + Σ B_2k / z^(2k+1)
  const double series =
      z * (1.0 +
           z * 0.5 +
           z2 * (1.0 / 6.0 +
                 z2 * (-1.0 / 30.0 +
                       z2 * (1.0 / 42.0 +
                             z2 * (-1.0 / 30.0 +
                                   z2 * (5.0 / 66.0 + z2 * (-691.0 / 2730.0 + z2 * (7.0 / 6.0))))))));
  return acc + series;
}

}  // namespace edl::special
