#pragma once

// Limiting kernels of a fully-connected network as functions of the input
// overlap rho = x.y / n0 for inputs on the sqrt(n0)-sphere:
//   Sigma^(1) = beta^2 + (1 - beta^2) rho
//   Sigma^(l+1) = beta^2 + (1 - beta^2) L^sigma(Sigma^(l))
//   dSigma^(l+1) = (1 - beta^2) L^sigma'(Sigma^(l))
//   Theta^(1) = Sigma^(1),  Theta^(l+1) = Sigma^(l+1) + Theta^(l) dSigma^(l+1)

#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ntk/errors.hpp"
#include "ntk/fit.hpp"
#include "ntk/io.hpp"
#include "ntk/nonlin.hpp"
#include "ntk/parallel.hpp"

namespace ntk {

struct FCArchitecture {
  Nonlinearity sigma = Nonlinearity::relu();
  double beta = 0.0;
  int depth = 1;
  int n0 = 1;
  DualMethod method = DualMethod::automatic;
  QuadratureSpec quadrature{};
};

inline void validate(const FCArchitecture& arch) {
  check_beta(arch.beta);
  if (arch.depth < 1) throw DomainError("depth must be at least 1");
  if (arch.n0 < 1) throw DomainError("input dimension must be at least 1");
}

/// x.y / n0 for x, y on the sqrt(n0)-sphere. With `project`, inputs are first
/// rescaled onto the sphere instead of being rejected.
inline double overlap(std::span<const double> x, std::span<const double> y, bool project = false) {
  if (x.size() != y.size() || x.empty()) throw DomainError("overlap: dimension mismatch");
  const double n0 = static_cast<double>(x.size());
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx += x[i] * x[i];
    yy += y[i] * y[i];
    xy += x[i] * y[i];
  }
  if (project) {
    if (xx == 0.0 || yy == 0.0) throw DomainError("overlap: cannot project the zero vector");
    return std::clamp(xy / std::sqrt(xx * yy), -1.0, 1.0);
  }
  const double tol = 1e-8;
  if (std::abs(std::sqrt(xx) - std::sqrt(n0)) > tol * std::sqrt(n0) ||
      std::abs(std::sqrt(yy) - std::sqrt(n0)) > tol * std::sqrt(n0))
    throw DomainError("overlap: inputs are not on the sqrt(n0)-sphere");
  return std::clamp(xy / n0, -1.0, 1.0);
}

/// Per-layer values at one overlap. sigma[l-1] = Sigma^(l), ntk[l-1] =
/// Theta^(l) for l = 1..L; sigma_dot[l-2] = dSigma^(l) for l = 2..L.
struct LayerValues {
  std::vector<double> sigma;
  std::vector<double> sigma_dot;
  std::vector<double> ntk;
};

namespace detail {

// Marginal variances within this distance of 1 are treated as exactly 1.
inline constexpr double kUnitSnap = 1e-12;

inline double snap_unit(double q) { return std::abs(q - 1.0) <= kUnitSnap ? 1.0 : q; }

}  // namespace detail

inline LayerValues fc_layers(const FCArchitecture& arch, double rho, int depth) {
  if (std::isnan(rho) || std::abs(rho) > 1.0) throw DomainError("overlap outside [-1, 1]");
  const double b2 = arch.beta * arch.beta, w2 = 1.0 - b2;
  LayerValues out;
  out.sigma.reserve(depth);
  out.ntk.reserve(depth);
  double q = detail::snap_unit(bias_map(arch.beta, 1.0));  // Sigma^(l)(x, x)
  double c = bias_map(arch.beta, rho);
  out.sigma.push_back(c);
  out.ntk.push_back(c);
  for (int l = 2; l <= depth; ++l) {
    const double cc = std::clamp(c, -q, q);
    const double dot = w2 * pair_expectation(arch.sigma, q, q, cc, true, arch.method, arch.quadrature);
    c = b2 + w2 * pair_expectation(arch.sigma, q, q, cc, false, arch.method, arch.quadrature);
    q = detail::snap_unit(b2 + w2 * pair_expectation(arch.sigma, q, q, q, false, arch.method, arch.quadrature));
    out.sigma_dot.push_back(dot);
    out.sigma.push_back(c);
    out.ntk.push_back(c + out.ntk.back() * dot);
  }
  return out;
}

/// Sigma^(l)(rho), 1 <= l.
inline double activation_kernel(const FCArchitecture& arch, double rho, int layer) {
  validate(arch);
  if (layer < 1) throw DomainError("activation_kernel: layer must be at least 1");
  return fc_layers(arch, rho, layer).sigma.back();
}

/// Theta^(L)(rho).
inline double fc_ntk(const FCArchitecture& arch, double rho) {
  validate(arch);
  return fc_layers(arch, rho, arch.depth).ntk.back();
}

/// Theta^(L)(rho) / Theta^(L)(1).
inline double normalized_ntk(const FCArchitecture& arch, double rho) {
  validate(arch);
  const double diag = fc_layers(arch, 1.0, arch.depth).ntk.back();
  if (!(diag > 0.0)) throw NumericalError("normalized_ntk: Theta(1) = 0, degenerate architecture");
  return fc_layers(arch, rho, arch.depth).ntk.back() / diag;
}

/// (1 - r^L) / (1 - r), or L when r = 1.
inline double diagonal_ntk_closed_form(double r, int depth) {
  if (std::abs(r - 1.0) <= 1e-12) return depth;
  return (1.0 - std::pow(r, depth)) / (1.0 - r);
}

struct KernelProfile {
  std::vector<double> rho_grid;
  std::vector<std::vector<double>> sigma_layers;      // [l-1][i], l = 1..L
  std::vector<std::vector<double>> sigma_dot_layers;  // [l-2][i], l = 2..L
  std::vector<double> ntk;
  std::vector<double> ntk_normalized;
  double ntk_diagonal = 0.0;
  bool projected_inputs = false;
};

/// `points` uniform values on [-1, 1] with exact endpoints.
inline std::vector<double> default_rho_grid(int points = 201) {
  if (points < 2) throw DomainError("rho grid needs at least two points");
  std::vector<double> grid(points);
  for (int i = 0; i < points; ++i) grid[i] = -1.0 + 2.0 * i / (points - 1);
  grid.front() = -1.0;
  grid.back() = 1.0;
  return grid;
}

inline KernelProfile compute_profile(const FCArchitecture& arch, std::vector<double> rho_grid, int jobs = 1) {
  validate(arch);
  const int L = arch.depth;
  KernelProfile p;
  p.rho_grid = std::move(rho_grid);
  const std::size_t n = p.rho_grid.size();
  p.sigma_layers.assign(L, std::vector<double>(n));
  p.sigma_dot_layers.assign(L - 1, std::vector<double>(n));
  p.ntk.resize(n);
  p.ntk_normalized.resize(n);
  p.ntk_diagonal = fc_layers(arch, 1.0, L).ntk.back();
  if (!(p.ntk_diagonal > 0.0)) throw NumericalError("compute_profile: Theta(1) = 0, degenerate architecture");
  parallel_for(n, jobs, [&](std::size_t i) {
    const LayerValues v = fc_layers(arch, p.rho_grid[i], L);
    for (int l = 0; l < L; ++l) p.sigma_layers[l][i] = v.sigma[l];
    for (int l = 0; l + 1 < L; ++l) p.sigma_dot_layers[l][i] = v.sigma_dot[l];
    p.ntk[i] = v.ntk.back();
    p.ntk_normalized[i] = v.ntk.back() / p.ntk_diagonal;
  });
  return p;
}

inline void write_profile_csv(std::ostream& os, const KernelProfile& p, const std::string& metadata = {}) {
  CsvWriter csv(os);
  if (!metadata.empty()) csv.comment(metadata);
  std::vector<std::string> names{"rho"};
  for (std::size_t l = 1; l <= p.sigma_layers.size(); ++l) names.push_back("sigma_" + std::to_string(l));
  names.push_back("ntk");
  names.push_back("ntk_normalized");
  csv.header(names);
  for (std::size_t i = 0; i < p.rho_grid.size(); ++i) {
    csv.cell(p.rho_grid[i]);
    for (const auto& layer : p.sigma_layers) csv.cell(layer[i]);
    csv.cell(p.ntk[i]).cell(p.ntk_normalized[i]);
    csv.end_row();
  }
}

inline nlohmann::json profile_to_json(const KernelProfile& p) {
  nlohmann::json j;
  j["rho"] = json_reals(p.rho_grid);
  j["sigma_layers"] = nlohmann::json::array();
  for (const auto& layer : p.sigma_layers) j["sigma_layers"].push_back(json_reals(layer));
  j["sigma_dot_layers"] = nlohmann::json::array();
  for (const auto& layer : p.sigma_dot_layers) j["sigma_dot_layers"].push_back(json_reals(layer));
  j["ntk"] = json_reals(p.ntk);
  j["ntk_normalized"] = json_reals(p.ntk_normalized);
  j["ntk_diagonal"] = json_real(p.ntk_diagonal);
  j["projected_inputs"] = p.projected_inputs;
  return j;
}

inline std::vector<int> depth_range(int first, int last) {
  if (first < 1 || last < first) throw DomainError("invalid depth range");
  std::vector<int> out;
  for (int L = first; L <= last; ++L) out.push_back(L);
  return out;
}

/// Values below this are treated as float noise and dropped from log fits.
inline constexpr double kFitFloor = 1e-14;

struct DecayRow {
  double rho = 0.0;
  int points = 0;              // depths retained in the fit
  LinearFit fit;               // log deviation against L
  double claimed_slope = 0.0;  // log r or log(r) / 2
  double fitted_constant = 0.0;
  double rate = 0.0;           // exp(fit.slope)
  bool consistent = false;     // |slope / claimed - 1| <= slack
  bool at_least_claimed = false;
  bool skipped = false;        // deviation identically zero (e.g. rho = 1)
};

struct OrderBoundReport {
  double r = 0.0;
  bool relu_rate = false;  // fit against (L/2) log r instead of L log r
  double slack = 0.1;
  std::vector<int> depths;
  std::vector<DecayRow> rows;
  bool sandwich_holds = true;  // 0 <= 1 - theta at every evaluated point
  bool passed = false;
};

/// Order regime: fits log(1 - theta^(L)(rho)) against L. For ReLU the claimed
/// slope is log(r)/2 (deviation ~ C r^(L/2)); otherwise deviation ~ C L r^L,
/// so log(deviation / L) is fitted against the slope log r.
inline OrderBoundReport bound_check_order(const FCArchitecture& arch, std::span<const double> rho_grid,
                                          std::span<const int> depths, double slack = 0.1) {
  validate(arch);
  OrderBoundReport rep;
  rep.r = characteristic_value(arch.sigma, arch.beta, arch.method, arch.quadrature);
  if (!(rep.r < 1.0 - kEdgeTolerance)) throw PreconditionError("bound_check_order requires r < 1");
  rep.relu_rate = arch.sigma.kind() == NonlinKind::relu;
  rep.slack = slack;
  rep.depths.assign(depths.begin(), depths.end());
  const double claimed = rep.relu_rate ? 0.5 * std::log(rep.r) : std::log(rep.r);
  int max_depth = 0;
  for (int L : depths) max_depth = std::max(max_depth, L);
  const std::vector<double> diag = fc_layers(arch, 1.0, max_depth).ntk;
  bool all_ok = true;
  for (double rho : rho_grid) {
    DecayRow row;
    row.rho = rho;
    row.claimed_slope = claimed;
    const std::vector<double> theta = fc_layers(arch, rho, max_depth).ntk;
    std::vector<double> xs, ys;
    for (int L : depths) {
      const double dev = 1.0 - theta[L - 1] / diag[L - 1];
      if (dev < -1e-12) rep.sandwich_holds = false;
      const double scale = rep.relu_rate ? std::pow(rep.r, 0.5 * L) : L * std::pow(rep.r, L);
      if (dev > kFitFloor) {
        row.fitted_constant = std::max(row.fitted_constant, dev / scale);
        xs.push_back(L);
        ys.push_back(rep.relu_rate ? std::log(dev) : std::log(dev / L));
      }
    }
    row.points = static_cast<int>(xs.size());
    if (xs.size() < 2) {
      row.skipped = true;
      row.consistent = row.at_least_claimed = true;
    } else {
      row.fit = fit_line(xs, ys);
      row.rate = std::exp(row.fit.slope);
      row.consistent = std::abs(row.fit.slope / claimed - 1.0) <= slack;
      row.at_least_claimed = row.fit.slope <= claimed * (1.0 - slack);
      all_ok = all_ok && row.consistent;
    }
    rep.rows.push_back(row);
  }
  rep.passed = all_ok && rep.sandwich_holds;
  return rep;
}

struct ChaosBoundReport {
  double r = 0.0;
  std::vector<int> depths;
  std::vector<DecayRow> rows;  // rate = h_fit
  bool passed = false;
};

/// Chaos regime: fits log|theta^(L)(rho)| against L; the fitted rate h must be below 1.
inline ChaosBoundReport bound_check_chaos(const FCArchitecture& arch, std::span<const double> rho_grid,
                                          std::span<const int> depths) {
  validate(arch);
  ChaosBoundReport rep;
  rep.r = characteristic_value(arch.sigma, arch.beta, arch.method, arch.quadrature);
  if (!(rep.r > 1.0 + kEdgeTolerance)) throw PreconditionError("bound_check_chaos requires r > 1");
  rep.depths.assign(depths.begin(), depths.end());
  int max_depth = 0;
  for (int L : depths) max_depth = std::max(max_depth, L);
  const std::vector<double> diag = fc_layers(arch, 1.0, max_depth).ntk;
  bool all_ok = true;
  for (double rho : rho_grid) {
    if (std::abs(rho) >= 1.0) throw PreconditionError("bound_check_chaos excludes rho = +-1");
    DecayRow row;
    row.rho = rho;
    const std::vector<double> theta = fc_layers(arch, rho, max_depth).ntk;
    std::vector<double> xs, ys;
    for (int L : depths) {
      const double v = std::abs(theta[L - 1] / diag[L - 1]);
      if (v > kFitFloor) {
        xs.push_back(L);
        ys.push_back(std::log(v));
      }
    }
    row.points = static_cast<int>(xs.size());
    if (xs.size() < 2) {
      // Already below float noise: decayed.
      row.skipped = true;
      row.consistent = row.at_least_claimed = true;
    } else {
      row.fit = fit_line(xs, ys);
      row.rate = std::exp(row.fit.slope);
      row.fitted_constant = std::exp(row.fit.intercept);
      row.consistent = row.at_least_claimed = row.rate < 1.0;
      all_ok = all_ok && row.consistent;
    }
    rep.rows.push_back(row);
  }
  rep.passed = all_ok;
  return rep;
}

}  // namespace ntk
