#pragma once

// Reference values computed without the library's quadrature: composite
// Simpson rules on conditional-normal reductions.

#include <cmath>
#include <functional>
#include <numbers>

namespace oracle {

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

/// E[max(u,0) max(v,0)] for standard normals with correlation rho, via
/// E[max(v,0) | u] = m Phi(m/s) + s phi(m/s), m = rho u, s = sqrt(1 - rho^2).
inline double relu_dual(double rho) {
  if (std::abs(rho) >= 1.0) return rho > 0 ? 0.5 : 0.0;
  const double s = std::sqrt(1.0 - rho * rho);
  return simpson(
      [&](double u) {
        const double m = rho * u;
        return u * (m * Phi(m / s) + s * phi(m / s)) * phi(u);
      },
      0.0, 12.0, 24000);
}

/// E[1(u>0) 1(v>0)].
inline double step_dual(double rho) {
  if (std::abs(rho) >= 1.0) return rho > 0 ? 0.5 : 0.0;
  const double s = std::sqrt(1.0 - rho * rho);
  return simpson([&](double u) { return Phi(rho * u / s) * phi(u); }, 0.0, 12.0, 24000);
}

/// E[f(u) g(v)] for smooth f, g and a centered Gaussian pair with the given
/// variances and covariance, by a tensor Simpson rule.
inline double smooth_pair(const std::function<double(double)>& f, const std::function<double(double)>& g, double var0,
                          double var1, double cov, int n = 600) {
  const double s0 = std::sqrt(var0);
  const double a = cov / s0;
  const double b = std::sqrt(std::max(var1 - a * a, 0.0));
  return simpson(
      [&](double z1) {
        const double fu = f(s0 * z1);
        return fu * phi(z1) * simpson([&](double z2) { return g(a * z1 + b * z2) * phi(z2); }, -10.0, 10.0, n);
      },
      -10.0, 10.0, n);
}

/// FC limiting kernels with a standardized ReLU sqrt(2) max(x, 0), by the plain recursion.
struct FcRelu {
  double beta;
  double sigma(double rho, int L) const {
    double s = beta * beta + (1.0 - beta * beta) * rho;
    for (int l = 2; l <= L; ++l) s = beta * beta + (1.0 - beta * beta) * 2.0 * relu_dual(s);
    return s;
  }
  double ntk(double rho, int L) const {
    double s = beta * beta + (1.0 - beta * beta) * rho;
    double t = s;
    for (int l = 2; l <= L; ++l) {
      const double sd = 2.0 * step_dual(s);
      s = beta * beta + (1.0 - beta * beta) * 2.0 * relu_dual(s);
      t = s + (1.0 - beta * beta) * sd * t;
    }
    return t;
  }
};

}  // namespace oracle
