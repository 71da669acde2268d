#pragma once

#include <cmath>
#include <numbers>

namespace mvglmm {

inline constexpr double log_two_pi = 1.8378770664093454835606594728112;

inline double norm_log_pdf(double x) { return -0.5 * (log_two_pi + x * x); }

inline double norm_pdf(double x) { return std::exp(norm_log_pdf(x)); }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace detail {

// Mills ratio (1 - Phi(t)) / phi(t) for t >= 8 by its continued fraction.
inline double mills_ratio(double t) {
  double f = t;
  for (int k = 60; k >= 1; --k) f = t + k / f;
  return 1.0 / f;
}

inline constexpr double lower_tail_cut = -8.0;

}  // namespace detail

inline double log_norm_cdf(double x) {
  if (x < detail::lower_tail_cut) return norm_log_pdf(x) + std::log(detail::mills_ratio(-x));
  if (x > 5.0) return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
  return std::log(norm_cdf(x));
}

// phi(x) / Phi(x), the derivative of log Phi.
inline double inverse_mills(double x) {
  if (x < detail::lower_tail_cut) return 1.0 / detail::mills_ratio(-x);
  return std::exp(norm_log_pdf(x) - log_norm_cdf(x));
}

}  // namespace mvglmm
