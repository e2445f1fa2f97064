#pragma once

// Gaussian expectations by quadrature.
//
// Smooth integrands use tensor-product Gauss-Hermite rules (probabilists'
// weight, normalized so the weights sum to one). Integrands with known kinks or
// jumps use composite Gauss-Legendre panels on the truncated line [-T, T],
// split exactly at the kinks, so that Heaviside-like derivatives integrate to
// near machine precision.

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "ntk/errors.hpp"

namespace ntk {

struct QuadratureSpec {
  int node_count = 80;  // Gauss-Hermite nodes per axis
};

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

inline QuadratureRule compute_gauss_legendre(int n) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    rule.nodes[i] = -z;
    rule.nodes[n - 1 - i] = z;
    rule.weights[i] = rule.weights[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
  }
  return rule;
}

// Physicists' Hermite roots by Newton iteration on the orthonormal recurrence,
// then mapped to the standard normal: x = sqrt(2) t, w = w_phys / sqrt(pi).
inline QuadratureRule compute_gauss_hermite(int n) {
  constexpr double pim4 = 0.7511255444649425;  // pi^(-1/4)
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * rule.nodes[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * rule.nodes[1];
    } else {
      z = 2.0 * z - rule.nodes[i - 2];
    }
    double pp = 0.0;
    bool converged = false;
    for (int iter = 0; iter < 200; ++iter) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-14 * std::max(1.0, std::abs(z))) {
        converged = true;
        break;
      }
    }
    if (!converged) throw NumericalError("Gauss-Hermite root iteration did not converge");
    rule.nodes[i] = z;
    rule.nodes[n - 1 - i] = -z;
    rule.weights[i] = rule.weights[n - 1 - i] = 2.0 / (pp * pp);
  }
  // Stored above in the physicists' variable with nodes[0] the largest root;
  // reorder ascending and rescale.
  std::reverse(rule.nodes.begin(), rule.nodes.end());
  std::reverse(rule.weights.begin(), rule.weights.end());
  const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] *= std::numbers::sqrt2;
    rule.weights[i] *= inv_sqrt_pi;
  }
  return rule;
}

template <typename Compute>
const QuadratureRule& cached_rule(std::map<int, QuadratureRule>& cache, std::mutex& mutex, int n,
                                  Compute compute) {
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, compute(n)).first;
  return it->second;
}

}  // namespace detail

/// Gauss-Legendre rule on [-1, 1]. Rules are cached; the returned reference is stable.
inline const QuadratureRule& gauss_legendre(int n) {
  static std::map<int, QuadratureRule> cache;
  static std::mutex mutex;
  if (n < 1) throw DomainError("Gauss-Legendre rule needs at least one node");
  return detail::cached_rule(cache, mutex, n, detail::compute_gauss_legendre);
}

/// Gauss-Hermite rule for E[f(Z)], Z ~ N(0,1): sum_i w_i f(x_i), sum_i w_i = 1.
inline const QuadratureRule& gauss_hermite(int n) {
  static std::map<int, QuadratureRule> cache;
  static std::mutex mutex;
  if (n < 2) throw DomainError("Gauss-Hermite rule needs at least two nodes");
  return detail::cached_rule(cache, mutex, n, detail::compute_gauss_hermite);
}

/// Truncation radius of the composite rule. P(|Z| > 8) ~ 1.2e-15.
inline constexpr double kTruncation = 8.0;

inline double standard_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

/// Integrate f(z) * phi(z) over [lo, hi], splitting at every breakpoint inside
/// the interval. Panels are at most one unit wide.
template <typename F>
double composite_normal_integral(F&& f, double lo, double hi, std::span<const double> breakpoints) {
  if (!(hi > lo)) return 0.0;
  std::vector<double> cuts;
  cuts.reserve(breakpoints.size() + 2);
  cuts.push_back(lo);
  for (double b : breakpoints)
    if (b > lo && b < hi) cuts.push_back(b);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], b = cuts[i + 1];
    const double width = b - a;
    if (width <= 0.0) continue;
    const int pieces = std::max(1, static_cast<int>(std::ceil(width)));
    const int order = width < 0.1 ? 3 : (width < 0.5 ? 6 : 12);
    const QuadratureRule& gl = gauss_legendre(order);
    const double h = width / pieces;
    for (int k = 0; k < pieces; ++k) {
      const double mid = a + (k + 0.5) * h;
      double panel = 0.0;
      for (int j = 0; j < order; ++j) {
        const double z = mid + 0.5 * h * gl.nodes[j];
        panel += gl.weights[j] * f(z) * standard_normal_pdf(z);
      }
      total += 0.5 * h * panel;
    }
  }
  return total;
}

}  // namespace ntk
