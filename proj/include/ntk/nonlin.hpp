#pragma once

// Nonlinearities and their Gaussian calculus: moments, dual activations
// R_sigma(rho) = E[sigma(u) sigma(v)] for unit-variance Gaussians with
// correlation rho, the derivative dual R_sigma', the characteristic value
// r = (1 - beta^2) E[sigma'(Z)^2], and the non-trivial fixed point of
// rho -> beta^2 + (1 - beta^2) R_sigma(rho).

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntk/errors.hpp"
#include "ntk/quadrature.hpp"

namespace ntk {

enum class NonlinKind { relu, identity, hermite, tabulated };
enum class NormalizationMode { raw, standardized, normalized };

inline std::string to_string(NonlinKind kind) {
  switch (kind) {
    case NonlinKind::relu: return "relu";
    case NonlinKind::identity: return "identity";
    case NonlinKind::hermite: return "hermite";
    case NonlinKind::tabulated: return "tabulated";
  }
  return "?";
}

inline std::string to_string(NormalizationMode mode) {
  switch (mode) {
    case NormalizationMode::raw: return "raw";
    case NormalizationMode::standardized: return "standardized";
    case NormalizationMode::normalized: return "normalized";
  }
  return "?";
}

/// A scalar activation a * base(x) + c. The base is one of: max(x, 0), x, a
/// series in orthonormal probabilists' Hermite polynomials, or a piecewise
/// linear table. Values are immutable; copies share the table storage.
class Nonlinearity {
 public:
  static Nonlinearity relu() { return Nonlinearity(NonlinKind::relu); }
  static Nonlinearity identity() { return Nonlinearity(NonlinKind::identity); }

  /// sigma(x) = sum_i b_i He_i(x) / sqrt(i!).
  static Nonlinearity hermite(std::vector<double> coefficients) {
    if (coefficients.empty()) throw DomainError("hermite series needs at least one coefficient");
    for (double b : coefficients)
      if (!std::isfinite(b)) throw DomainError("hermite coefficients must be finite");
    Nonlinearity s(NonlinKind::hermite);
    s.coefficients_ = std::make_shared<const std::vector<double>>(std::move(coefficients));
    return s;
  }

  /// Linear interpolation through (x_i, y_i). The grid must be strictly
  /// increasing and cover [-8, 8]; the derivative is the linear interpolant of
  /// central differences at the nodes.
  static Nonlinearity tabulated(std::vector<double> xs, std::vector<double> ys) {
    if (xs.size() != ys.size() || xs.size() < 3)
      throw DomainError("table needs matching x/y arrays with at least three points");
    for (std::size_t i = 1; i < xs.size(); ++i)
      if (!(xs[i] > xs[i - 1])) throw DomainError("table grid must be strictly increasing");
    if (xs.front() > -kTruncation || xs.back() < kTruncation)
      throw DomainError("table grid must cover [-8, 8]");
    Nonlinearity s(NonlinKind::tabulated);
    s.table_ = std::make_shared<const Table>(std::move(xs), std::move(ys));
    return s;
  }

  /// Tabulate f on a uniform grid of `points` nodes over [lo, hi].
  template <typename F>
  static Nonlinearity tabulate(F&& f, double lo = -10.0, double hi = 10.0, int points = 1001) {
    std::vector<double> xs(points), ys(points);
    for (int i = 0; i < points; ++i) {
      xs[i] = lo + (hi - lo) * i / (points - 1);
      ys[i] = f(xs[i]);
    }
    return tabulated(std::move(xs), std::move(ys));
  }

  /// Returns scale * (*this) + shift.
  Nonlinearity with_affine(double scale, double shift) const {
    Nonlinearity s = *this;
    s.scale_ = scale * scale_;
    s.shift_ = scale * shift_ + shift;
    return s;
  }

  NonlinKind kind() const { return kind_; }
  double scale() const { return scale_; }
  double shift() const { return shift_; }
  std::span<const double> coefficients() const {
    return coefficients_ ? std::span<const double>(*coefficients_) : std::span<const double>();
  }
  std::span<const double> table_x() const {
    return table_ ? std::span<const double>(table_->xs) : std::span<const double>();
  }
  std::span<const double> table_y() const {
    return table_ ? std::span<const double>(table_->ys) : std::span<const double>();
  }

  double operator()(double x) const { return scale_ * base(x) + shift_; }
  double derivative(double x) const { return scale_ * base_derivative(x); }

  /// Second derivative where it exists; zero for piecewise-linear kinds.
  double second_derivative(double x) const {
    if (kind_ != NonlinKind::hermite) return 0.0;
    const auto& b = *coefficients_;
    double total = 0.0;
    hermite_eval(x, b.size(), [&](std::size_t i, double h) {
      if (i + 2 < b.size()) total += b[i + 2] * std::sqrt(static_cast<double>((i + 1) * (i + 2))) * h;
    });
    return scale_ * total;
  }

  /// Points where sigma or sigma' is not smooth.
  std::span<const double> breakpoints() const {
    static const double zero[1] = {0.0};
    if (kind_ == NonlinKind::relu) return std::span<const double>(zero, 1);
    if (kind_ == NonlinKind::tabulated) return table_x();
    return {};
  }

  bool is_smooth() const { return kind_ == NonlinKind::identity || kind_ == NonlinKind::hermite; }

  /// sigma is linear, i.e. scale * x + shift.
  bool is_affine() const {
    if (kind_ == NonlinKind::identity) return true;
    if (kind_ == NonlinKind::hermite) {
      const auto& b = *coefficients_;
      for (std::size_t i = 2; i < b.size(); ++i)
        if (b[i] != 0.0) return false;
      return true;
    }
    return false;
  }

  std::string describe() const;

 private:
  struct Table {
    Table(std::vector<double> x, std::vector<double> y) : xs(std::move(x)), ys(std::move(y)) {
      const std::size_t n = xs.size();
      dys.resize(n);
      dys[0] = (ys[1] - ys[0]) / (xs[1] - xs[0]);
      dys[n - 1] = (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2]);
      for (std::size_t i = 1; i + 1 < n; ++i) dys[i] = (ys[i + 1] - ys[i - 1]) / (xs[i + 1] - xs[i - 1]);
      const double h = (xs.back() - xs.front()) / (n - 1);
      uniform = true;
      for (std::size_t i = 1; i < n && uniform; ++i)
        uniform = std::abs((xs[i] - xs[i - 1]) - h) <= 1e-12 * std::max(1.0, std::abs(h));
      step = h;
    }
    std::size_t cell(double x) const {
      if (x < xs.front() || x > xs.back())
        throw DomainError("tabulated nonlinearity evaluated outside its grid at x=" + std::to_string(x));
      std::size_t i;
      if (uniform) {
        i = static_cast<std::size_t>((x - xs.front()) / step);
        if (i >= xs.size() - 1) i = xs.size() - 2;
        while (i > 0 && x < xs[i]) --i;
        while (i + 2 < xs.size() && x >= xs[i + 1]) ++i;
      } else {
        i = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
        i = i == 0 ? 0 : std::min(i - 1, xs.size() - 2);
      }
      return i;
    }
    static double lerp(const std::vector<double>& xv, const std::vector<double>& v, std::size_t i, double x) {
      const double t = (x - xv[i]) / (xv[i + 1] - xv[i]);
      return v[i] + t * (v[i + 1] - v[i]);
    }
    std::vector<double> xs, ys, dys;
    bool uniform = false;
    double step = 0.0;
  };

  explicit Nonlinearity(NonlinKind kind) : kind_(kind) {}

  template <typename Visit>
  static void hermite_eval(double x, std::size_t count, Visit&& visit) {
    double prev = 0.0, cur = 1.0;  // h_{-1}, h_0
    for (std::size_t i = 0; i < count; ++i) {
      visit(i, cur);
      const double next = (x * cur - std::sqrt(static_cast<double>(i)) * prev) / std::sqrt(static_cast<double>(i + 1));
      prev = cur;
      cur = next;
    }
  }

  double base(double x) const {
    switch (kind_) {
      case NonlinKind::relu: return x > 0.0 ? x : 0.0;
      case NonlinKind::identity: return x;
      case NonlinKind::hermite: {
        const auto& b = *coefficients_;
        double total = 0.0;
        hermite_eval(x, b.size(), [&](std::size_t i, double h) { total += b[i] * h; });
        return total;
      }
      case NonlinKind::tabulated: {
        const std::size_t i = table_->cell(x);
        return Table::lerp(table_->xs, table_->ys, i, x);
      }
    }
    return 0.0;
  }

  // h_i' = sqrt(i) h_{i-1}
  double base_derivative(double x) const {
    switch (kind_) {
      case NonlinKind::relu: return x > 0.0 ? 1.0 : 0.0;  // 0 at the kink
      case NonlinKind::identity: return 1.0;
      case NonlinKind::hermite: {
        const auto& b = *coefficients_;
        double total = 0.0;
        hermite_eval(x, b.size(), [&](std::size_t i, double h) {
          if (i + 1 < b.size()) total += b[i + 1] * std::sqrt(static_cast<double>(i + 1)) * h;
        });
        return total;
      }
      case NonlinKind::tabulated: {
        const std::size_t i = table_->cell(x);
        return Table::lerp(table_->xs, table_->dys, i, x);
      }
    }
    return 0.0;
  }

  NonlinKind kind_;
  double scale_ = 1.0;
  double shift_ = 0.0;
  std::shared_ptr<const std::vector<double>> coefficients_;
  std::shared_ptr<const Table> table_;
};

inline std::string Nonlinearity::describe() const {
  std::string s = std::to_string(scale_) + "*" + to_string(kind_) + "+" + std::to_string(shift_);
  return s;
}

/// How a Gaussian expectation is evaluated. `automatic` uses a closed form
/// when the kind has one and quadrature otherwise.
enum class DualMethod { automatic, closed_form, quadrature };

namespace detail {

inline constexpr double kInvSqrt2Pi = 0.3989422804014327;  // E[max(Z,0)]

inline bool has_closed_form(const Nonlinearity& s) { return s.kind() != NonlinKind::tabulated; }

inline double clamp_correlation(double rho) {
  if (std::isnan(rho) || std::abs(rho) > 1.0 + 1e-9)
    throw DomainError("correlation outside [-1, 1]: " + std::to_string(rho));
  // Within a few ulps of +-1 the pair is the diagonal up to roundoff; the
  // derivative dual has infinite slope there, so snap instead of amplifying.
  if (std::abs(rho) > 1.0 - 1e-14) return rho > 0.0 ? 1.0 : -1.0;
  return rho;
}

// E[max(u,0) max(v,0)] for unit Gaussians with correlation rho.
inline double relu_raw_dual(double rho) {
  return (std::sqrt(std::max(0.0, 1.0 - rho * rho)) + (std::numbers::pi - std::acos(rho)) * rho) /
         (2.0 * std::numbers::pi);
}

// P(u > 0, v > 0)
inline double heaviside_dual(double rho) { return (std::numbers::pi - std::acos(rho)) / (2.0 * std::numbers::pi); }

inline double series_dual(std::span<const double> b, double scale, double shift, double rho, bool derivative) {
  // sigma = scale * sum b_i h_i + shift; shift only touches the constant term.
  double total = 0.0, power = 1.0;
  if (!derivative) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double coef = i == 0 ? scale * b[0] + shift : scale * b[i];
      total += coef * coef * power;
      power *= rho;
    }
  } else {
    for (std::size_t i = 1; i < b.size(); ++i) {
      const double coef = scale * b[i];
      total += i * coef * coef * power;
      power *= rho;
    }
  }
  return total;
}

template <typename G0, typename G1>
double pair_expectation_quadrature(const G0& g0, const G1& g1, std::span<const double> kinks, double sd0,
                                   double sd1, double rho, bool smooth, const QuadratureSpec& spec) {
  const double tau = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  if (smooth) {
    const QuadratureRule& gh = gauss_hermite(spec.node_count);
    const int n = static_cast<int>(gh.nodes.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z0 = gh.nodes[i];
      const double a = g0(sd0 * z0);
      double inner = 0.0;
      if (tau == 0.0) {
        inner = g1(sd1 * rho * z0);
      } else {
        for (int j = 0; j < n; ++j) inner += gh.weights[j] * g1(sd1 * (rho * z0 + tau * gh.nodes[j]));
      }
      total += gh.weights[i] * a * inner;
    }
    return total;
  }

  const double T = kTruncation;
  std::vector<double> outer_cuts;
  for (double k : kinks) {
    if (sd0 > 0.0) outer_cuts.push_back(k / sd0);
  }
  if (tau < 1e-13) {
    // Degenerate law: v = sign(rho) * u.
    const double sign = rho >= 0.0 ? 1.0 : -1.0;
    for (double k : kinks)
      if (sd1 > 0.0) outer_cuts.push_back(sign * k / sd1);
    return composite_normal_integral([&](double z) { return g0(sd0 * z) * g1(sd1 * sign * z); }, -T, T,
                                     outer_cuts);
  }
  std::vector<double> inner_cuts(kinks.size());
  auto outer = [&](double z0) {
    const double a = g0(sd0 * z0);
    if (a == 0.0) return 0.0;
    // Keep rho*z0 + tau*z1 inside [-T, T].
    double lo = (-T - rho * z0) / tau, hi = (T - rho * z0) / tau;
    lo = std::max(lo, -T);
    hi = std::min(hi, T);
    for (std::size_t i = 0; i < kinks.size(); ++i)
      inner_cuts[i] = sd1 > 0.0 ? (kinks[i] / sd1 - rho * z0) / tau : -2.0 * T;
    const double inner = composite_normal_integral(
        [&](double z1) { return g1(sd1 * (rho * z0 + tau * z1)); }, lo, hi, inner_cuts);
    return a * inner;
  };
  return composite_normal_integral(outer, -T, T, outer_cuts);
}

}  // namespace detail

/// E[sigma(Z)^power], Z ~ N(0,1), power in {1, 2}.
inline double gaussian_moment(const Nonlinearity& s, int power, DualMethod method = DualMethod::automatic,
                              const QuadratureSpec& spec = {}) {
  if (power != 1 && power != 2) throw DomainError("gaussian_moment supports power 1 or 2");
  const double a = s.scale(), c = s.shift();
  const bool closed = method == DualMethod::closed_form ||
                      (method == DualMethod::automatic && detail::has_closed_form(s));
  if (closed) {
    switch (s.kind()) {
      case NonlinKind::relu:
        return power == 1 ? a * detail::kInvSqrt2Pi + c : a * a * 0.5 + 2.0 * a * c * detail::kInvSqrt2Pi + c * c;
      case NonlinKind::identity: return power == 1 ? c : a * a + c * c;
      case NonlinKind::hermite: {
        auto b = s.coefficients();
        if (power == 1) return a * b[0] + c;
        return detail::series_dual(b, a, c, 1.0, false);
      }
      case NonlinKind::tabulated: throw DomainError("tabulated nonlinearity has no closed-form moments");
    }
  }
  auto f = [&](double x) {
    const double v = s(x);
    return power == 1 ? v : v * v;
  };
  if (s.is_smooth()) {
    const QuadratureRule& gh = gauss_hermite(spec.node_count);
    double total = 0.0;
    for (std::size_t i = 0; i < gh.nodes.size(); ++i) total += gh.weights[i] * f(gh.nodes[i]);
    return total;
  }
  return composite_normal_integral(f, -kTruncation, kTruncation, s.breakpoints());
}

/// E[sigma'(Z)^2].
inline double derivative_second_moment(const Nonlinearity& s, DualMethod method = DualMethod::automatic,
                                       const QuadratureSpec& spec = {}) {
  const double a = s.scale();
  const bool closed = method == DualMethod::closed_form ||
                      (method == DualMethod::automatic && detail::has_closed_form(s));
  if (closed) {
    switch (s.kind()) {
      case NonlinKind::relu: return 0.5 * a * a;
      case NonlinKind::identity: return a * a;
      case NonlinKind::hermite: return detail::series_dual(s.coefficients(), a, s.shift(), 1.0, true);
      case NonlinKind::tabulated: throw DomainError("tabulated nonlinearity has no closed-form moments");
    }
  }
  auto f = [&](double x) {
    const double d = s.derivative(x);
    return d * d;
  };
  if (s.is_smooth()) {
    const QuadratureRule& gh = gauss_hermite(spec.node_count);
    double total = 0.0;
    for (std::size_t i = 0; i < gh.nodes.size(); ++i) total += gh.weights[i] * f(gh.nodes[i]);
    return total;
  }
  return composite_normal_integral(f, -kTruncation, kTruncation, s.breakpoints());
}

/// sigma / sqrt(E[sigma(Z)^2]).
inline Nonlinearity standardize(const Nonlinearity& s, DualMethod method = DualMethod::automatic,
                                const QuadratureSpec& spec = {}) {
  const double m2 = gaussian_moment(s, 2, method, spec);
  if (!(m2 > 0.0)) throw DomainError("cannot standardize a nonlinearity with E[sigma^2] = 0");
  return s.with_affine(1.0 / std::sqrt(m2), 0.0);
}

/// (sigma - E[sigma(Z)]) / sd(sigma(Z)).
inline Nonlinearity normalize(const Nonlinearity& s, DualMethod method = DualMethod::automatic,
                              const QuadratureSpec& spec = {}) {
  const double m1 = gaussian_moment(s, 1, method, spec);
  const double m2 = gaussian_moment(s, 2, method, spec);
  const double var = m2 - m1 * m1;
  if (!(var > 1e-300) || var <= 1e-14 * std::max(1.0, m2))
    throw DomainError("cannot normalize a constant nonlinearity");
  const double inv = 1.0 / std::sqrt(var);
  return s.with_affine(inv, -m1 * inv);
}

inline Nonlinearity apply_normalization(const Nonlinearity& s, NormalizationMode mode) {
  switch (mode) {
    case NormalizationMode::raw: return s;
    case NormalizationMode::standardized: return standardize(s);
    case NormalizationMode::normalized: return normalize(s);
  }
  return s;
}

/// L^sigma for a centered Gaussian pair with variances (var0, var1) and
/// covariance cov: E[g(y0) g(y1)] with g = sigma, or g = sigma' when
/// `derivative` is set.
inline double pair_expectation(const Nonlinearity& s, double var0, double var1, double cov, bool derivative,
                               DualMethod method = DualMethod::automatic, const QuadratureSpec& spec = {}) {
  if (var0 < 0.0 || var1 < 0.0) throw DomainError("negative variance in Gaussian pair");
  const double sd0 = std::sqrt(var0), sd1 = std::sqrt(var1);
  const double denom = sd0 * sd1;
  const double rho = denom > 0.0 ? detail::clamp_correlation(cov / denom) : 0.0;
  const double a = s.scale(), c = s.shift();
  const bool unit = std::abs(var0 - 1.0) <= 1e-15 && std::abs(var1 - 1.0) <= 1e-15;
  const bool closed = method == DualMethod::closed_form ||
                      (method == DualMethod::automatic && detail::has_closed_form(s) &&
                       (s.kind() != NonlinKind::hermite || unit));
  if (closed) {
    switch (s.kind()) {
      case NonlinKind::relu:
        if (derivative) return denom > 0.0 ? a * a * detail::heaviside_dual(rho) : 0.0;
        return a * a * denom * detail::relu_raw_dual(rho) + a * c * (sd0 + sd1) * detail::kInvSqrt2Pi + c * c;
      case NonlinKind::identity: return derivative ? a * a : a * a * cov + c * c;
      case NonlinKind::hermite:
        if (!unit) throw DomainError("hermite closed form requires unit marginal variances");
        return detail::series_dual(s.coefficients(), a, c, rho, derivative);
      case NonlinKind::tabulated: throw DomainError("tabulated nonlinearity has no closed-form dual");
    }
  }
  if (derivative) {
    auto g = [&](double x) { return s.derivative(x); };
    return detail::pair_expectation_quadrature(g, g, s.breakpoints(), sd0, sd1, rho, s.is_smooth(), spec);
  }
  auto g = [&](double x) { return s(x); };
  return detail::pair_expectation_quadrature(g, g, s.breakpoints(), sd0, sd1, rho, s.is_smooth(), spec);
}

/// R_sigma(rho).
inline double dual(const Nonlinearity& s, double rho, DualMethod method = DualMethod::automatic,
                   const QuadratureSpec& spec = {}) {
  if (std::isnan(rho) || std::abs(rho) > 1.0) throw DomainError("dual: |rho| > 1");
  return pair_expectation(s, 1.0, 1.0, rho, false, method, spec);
}

/// R_sigma'(rho) = E[sigma'(u) sigma'(v)].
inline double dual_derivative(const Nonlinearity& s, double rho, DualMethod method = DualMethod::automatic,
                              const QuadratureSpec& spec = {}) {
  if (std::isnan(rho) || std::abs(rho) > 1.0) throw DomainError("dual_derivative: |rho| > 1");
  return pair_expectation(s, 1.0, 1.0, rho, true, method, spec);
}

/// B_beta(rho) = beta^2 + (1 - beta^2) rho.
inline double bias_map(double beta, double rho) { return beta * beta + (1.0 - beta * beta) * rho; }

inline void check_beta(double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("beta must lie in [0, 1]");
}

/// r = (1 - beta^2) E[sigma'(Z)^2].
inline double characteristic_value(const Nonlinearity& s, double beta, DualMethod method = DualMethod::automatic,
                                   const QuadratureSpec& spec = {}) {
  check_beta(beta);
  return (1.0 - beta * beta) * derivative_second_moment(s, method, spec);
}

inline constexpr double kEdgeTolerance = 1e-9;

/// Non-trivial fixed point a in [0, 1) of B_beta o R_sigma, present only in
/// the chaotic regime (r > 1).
inline std::optional<double> fixed_point(const Nonlinearity& s, double beta, const QuadratureSpec& spec = {}) {
  const double r = characteristic_value(s, beta, DualMethod::automatic, spec);
  if (!(r > 1.0 + kEdgeTolerance)) return std::nullopt;
  auto g = [&](double rho) { return bias_map(beta, dual(s, rho, DualMethod::automatic, spec)) - rho; };
  double lo = 0.0;
  const double g_lo = g(lo);
  if (std::abs(g_lo) <= 1e-12) return 0.0;
  if (g_lo < 0.0) throw NumericalError("fixed_point: map lies below the diagonal at 0");
  double hi = -1.0;
  for (int k = 2; k <= 14; ++k) {
    const double candidate = 1.0 - std::pow(10.0, -k);
    if (g(candidate) < 0.0) {
      hi = candidate;
      break;
    }
  }
  if (hi < 0.0) throw NumericalError("fixed_point: no sign change below 1");
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if (std::abs(gm) <= 1e-12 && hi - lo < 1e-10) return mid;
    if (gm > 0.0)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon()) {
      const double a = 0.5 * (lo + hi);
      if (std::abs(g(a)) <= 1e-12) return a;
      throw NumericalError("fixed_point: residual above 1e-12 at bracket collapse");
    }
  }
  throw NumericalError("fixed_point: bisection did not converge in 200 iterations");
}

enum class Regime { order, edge, chaos };

inline std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::order: return "order";
    case Regime::edge: return "edge";
    case Regime::chaos: return "chaos";
  }
  return "?";
}

struct RegimeReport {
  double r = 0.0;
  Regime regime = Regime::order;
  std::optional<double> fixed_point;
  double beta = 0.0;
  /// Empty when the depth bounds apply to this sigma; otherwise the reason they are not guaranteed.
  std::string note;
};

inline RegimeReport classify(const Nonlinearity& s, double beta, const QuadratureSpec& spec = {}) {
  RegimeReport report;
  report.beta = beta;
  report.r = characteristic_value(s, beta, DualMethod::automatic, spec);
  if (report.r < 1.0 - kEdgeTolerance)
    report.regime = Regime::order;
  else if (report.r > 1.0 + kEdgeTolerance)
    report.regime = Regime::chaos;
  else
    report.regime = Regime::edge;
  if (report.regime == Regime::chaos) report.fixed_point = fixed_point(s, beta, spec);
  if (s.kind() == NonlinKind::tabulated) report.note = "bounds not guaranteed: sigma is not twice differentiable";
  return report;
}

}  // namespace ntk
