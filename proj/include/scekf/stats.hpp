#pragma once

// Chi-square distribution helpers and a one-sample Kolmogorov-Smirnov test.
// Used by the consistency checks (innovation gating rates, NEES envelopes)
// and by tests that compare sampled statistics against reference CDFs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace scekf {

namespace detail {

// Regularized lower incomplete gamma P(a, x), series expansion.
// Converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 2000; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x), Lentz continued fraction.
// Converges quickly for x > a + 1.
inline double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 2000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

inline double gamma_p(double a, double x) {
  if (a <= 0.0) throw std::invalid_argument("gamma_p: a must be positive");
  if (x < 0.0) throw std::invalid_argument("gamma_p: x must be nonnegative");
  if (x == 0.0) return 0.0;
  return x < a + 1.0 ? detail::gamma_p_series(a, x) : 1.0 - detail::gamma_q_cf(a, x);
}

inline double chi2_cdf(double dof, double x) {
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * dof, 0.5 * x);
}

// Inverse CDF by bisection. 200 halvings of the bracket reach machine
// precision from any reasonable starting width; no derivative needed.
inline double chi2_quantile(double dof, double p) {
  if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("chi2_quantile: p must be in (0,1)");
  double lo = 0.0;
  double hi = dof + 10.0;
  while (chi2_cdf(dof, hi) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_cdf(dof, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Asymptotic Kolmogorov tail with the Stephens small-sample correction.
// The alternating series converges fast only for large lambda; below the
// crossover the Jacobi theta-function form of the CDF is used instead.
inline double ks_tail(double n, double d) {
  constexpr double pi = 3.141592653589793238462643383279502884;
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  if (lambda < 1e-8) return 1.0;
  if (lambda < 1.18) {
    double cdf = 0.0;
    for (int j = 1; j <= 50; ++j) {
      const double k = 2.0 * j - 1.0;
      const double term = std::exp(-k * k * pi * pi / (8.0 * lambda * lambda));
      cdf += term;
      if (term < 1e-18) break;
    }
    cdf *= std::sqrt(2.0 * pi) / lambda;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int j = 1; j <= 1000; ++j) {
    const double term = 2.0 * ((j % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-14) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

// One-sample KS test of `samples` against the continuous CDF `cdf`.
inline KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_test: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return {d, ks_tail(n, d)};
}

}  // namespace scekf
