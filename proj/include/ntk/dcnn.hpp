#pragma once

// Deconvolutional networks as position graphs. In dimension d a position q of
// layer l is a parent of p in layer l+1 when the tap t = s_d q_d - p_d - o_d
// lies in [0, w_d s_d); edges with equal taps share weights. Each position
// thus has w_d parents per axis, and edges q -> p, q' -> p' share exactly
// when s | p - p' and q - q' = (p - p') / s.

#include <algorithm>
#include <climits>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ntk/errors.hpp"
#include "ntk/fc_kernel.hpp"
#include "ntk/fit.hpp"
#include "ntk/io.hpp"
#include "ntk/netgraph.hpp"
#include "ntk/nonlin.hpp"
#include "ntk/random.hpp"

namespace ntk {

enum class BorderMode { borderless, bounded };

struct DCNNSpec {
  int dim = 1;
  std::vector<int> stride{2};
  std::vector<int> window{2};  // w_d: the window spans w_d * s_d taps
  std::vector<int> offset{0};  // o_d: first tap relative to s q - p
  int depth = 1;
  BorderMode border = BorderMode::borderless;
  /// Borderless: positions of I_L; lower layers are the ancestor closure.
  std::vector<Coord> output_patch;
  /// Bounded: per layer l = 0..L, per axis, I_l = [0, extent).
  std::vector<std::vector<long long>> extents;
  Parametrization parametrization = Parametrization::graph_based;

  long long stride_product() const {
    long long S = 1;
    for (int d = 0; d < dim; ++d) S *= stride[d];
    return S;
  }
  int window_size() const {
    int W = 1;
    for (int d = 0; d < dim; ++d) W *= window[d];
    return W;
  }
};

inline void validate(const DCNNSpec& spec) {
  if (spec.dim < 1 || spec.dim > kMaxDim) throw DomainError("dcnn: dimension must be 1..3");
  if (static_cast<int>(spec.stride.size()) != spec.dim || static_cast<int>(spec.window.size()) != spec.dim ||
      static_cast<int>(spec.offset.size()) != spec.dim)
    throw DomainError("dcnn: stride, window and offset need one entry per axis");
  for (int d = 0; d < spec.dim; ++d) {
    if (spec.stride[d] < 2) throw DomainError("dcnn: strides must be at least 2");
    if (spec.window[d] < 1) throw DomainError("dcnn: window multipliers must be at least 1");
  }
  if (spec.depth < 1) throw DomainError("dcnn: depth must be at least 1");
}

/// All coordinates of the box [lo, hi] (inclusive) in `dim` axes.
inline std::vector<Coord> box(int dim, const std::vector<long long>& lo, const std::vector<long long>& hi) {
  std::vector<Coord> out;
  Coord c{};
  for (int d = 0; d < dim; ++d) c[d] = lo[d];
  if (dim < 1) return out;
  for (int d = 0; d < dim; ++d)
    if (hi[d] < lo[d]) return out;
  for (;;) {
    out.push_back(c);
    int d = dim - 1;
    while (d >= 0 && c[d] == hi[d]) {
      c[d] = lo[d];
      --d;
    }
    if (d < 0) break;
    ++c[d];
  }
  return out;
}

namespace detail {

inline long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline long long ceil_div(long long a, long long b) { return -floor_div(-a, b); }

// Parents of p before clipping, with their sharing keys.
inline void dcnn_parents(const DCNNSpec& spec, const Coord& p, std::vector<std::pair<Coord, long long>>& out) {
  out.clear();
  std::vector<long long> lo(spec.dim), hi(spec.dim);
  for (int d = 0; d < spec.dim; ++d) {
    const long long s = spec.stride[d];
    lo[d] = ceil_div(p[d] + spec.offset[d], s);
    hi[d] = floor_div(p[d] + spec.offset[d] + spec.window[d] * s - 1, s);
  }
  for (const Coord& q : box(spec.dim, lo, hi)) {
    long long key = 0;
    for (int d = 0; d < spec.dim; ++d) {
      const long long taps = static_cast<long long>(spec.window[d]) * spec.stride[d];
      key = key * taps + (spec.stride[d] * q[d] - p[d] - spec.offset[d]);
    }
    out.emplace_back(q, key);
  }
}

}  // namespace detail

inline PositionGraph build(const DCNNSpec& spec) {
  validate(spec);
  const int L = spec.depth;
  std::vector<std::vector<Coord>> layers(L + 1);
  if (spec.border == BorderMode::borderless) {
    if (spec.output_patch.empty()) throw DomainError("dcnn: borderless mode needs an output patch");
    std::set<Coord> cur(spec.output_patch.begin(), spec.output_patch.end());
    layers[L].assign(cur.begin(), cur.end());
    std::vector<std::pair<Coord, long long>> ps;
    for (int l = L - 1; l >= 0; --l) {
      std::set<Coord> next;
      for (const Coord& p : layers[l + 1]) {
        detail::dcnn_parents(spec, p, ps);
        for (const auto& [q, key] : ps) next.insert(q);
      }
      layers[l].assign(next.begin(), next.end());
    }
  } else {
    if (static_cast<int>(spec.extents.size()) != L + 1) throw DomainError("dcnn: bounded mode needs extents for layers 0..L");
    for (int l = 0; l <= L; ++l) {
      if (static_cast<int>(spec.extents[l].size()) != spec.dim) throw DomainError("dcnn: extent arity mismatch");
      std::vector<long long> lo(spec.dim, 0), hi(spec.dim);
      for (int d = 0; d < spec.dim; ++d) {
        if (spec.extents[l][d] < 1) throw DomainError("dcnn: extents must be positive");
        hi[d] = spec.extents[l][d] - 1;
      }
      layers[l] = box(spec.dim, lo, hi);
    }
  }
  GraphBuilder b(spec.dim, L);
  for (int l = 0; l <= L; ++l)
    for (const Coord& c : layers[l]) b.add_position(l, c);
  // Index lookup per layer via a temporary graph-free map.
  std::vector<std::map<Coord, int>> index(L + 1);
  for (int l = 0; l <= L; ++l)
    for (std::size_t i = 0; i < layers[l].size(); ++i) index[l][layers[l][i]] = static_cast<int>(i);
  std::vector<std::pair<Coord, long long>> ps;
  for (int l = 1; l <= L; ++l) {
    for (std::size_t i = 0; i < layers[l].size(); ++i) {
      detail::dcnn_parents(spec, layers[l][i], ps);
      int count = 0;
      for (const auto& [q, key] : ps) {
        auto it = index[l - 1].find(q);
        if (it == index[l - 1].end()) continue;
        b.add_edge(l, static_cast<int>(i), it->second, key);
        ++count;
      }
      if (count == 0)
        throw DomainError("dcnn: position in layer " + std::to_string(l) + " has no parents inside the extents");
    }
  }
  return b.build();
}

inline constexpr int kInfiniteValuation = INT_MAX;

/// Largest k with s_d^k | n_d on every axis; kInfiniteValuation for n = 0.
inline int s_valuation(const Coord& n, const std::vector<int>& s) {
  int v = kInfiniteValuation;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (s[d] < 2) throw DomainError("s_valuation: strides must be at least 2");
    long long x = n[d] < 0 ? -n[d] : n[d];
    if (x == 0) continue;
    int k = 0;
    while (x % s[d] == 0) {
      x /= s[d];
      ++k;
    }
    v = std::min(v, k);
  }
  return v;
}

inline Coord coord_difference(const Coord& a, const Coord& b) {
  Coord d{};
  for (int i = 0; i < kMaxDim; ++i) d[i] = a[i] - b[i];
  return d;
}

/// Deterministic on-sphere input vector for a layer-0 coordinate:
/// |x|^2 = n0. Coordinates must fit in 16 bits per axis.
inline std::vector<double> sphere_input(std::uint64_t seed, std::uint32_t input_id, const Coord& c, int n0) {
  std::uint64_t base = 0;
  for (int d = 0; d < kMaxDim; ++d) {
    if (c[d] < -32768 || c[d] > 32767) throw DomainError("sphere_input: coordinate out of range");
    base = (base << 16) | static_cast<std::uint64_t>(c[d] + 32768);
  }
  if (n0 < 1 || n0 > 65536) throw DomainError("sphere_input: n0 must be 1..65536");
  const GaussianStream g(seed, input_id, 0x494E5055u);
  std::vector<double> v(n0);
  double norm2 = 0.0;
  for (int i = 0; i < n0; ++i) {
    v[i] = g((base << 16) | static_cast<std::uint64_t>(i));
    norm2 += v[i] * v[i];
  }
  const double scale = std::sqrt(n0 / norm2);
  for (double& a : v) a *= scale;
  return v;
}

using InputSource = std::function<std::vector<double>(const Coord&)>;

inline InputField make_input_field(const PositionGraph& g, int n0, const InputSource& source) {
  InputField f;
  f.n0 = n0;
  for (const Coord& c : g.layer(0)) {
    f.values.push_back(source(c));
    if (static_cast<int>(f.values.back().size()) != n0) throw DomainError("input source returned wrong dimension");
  }
  return f;
}

inline InputSource random_sphere_source(std::uint64_t seed, std::uint32_t input_id, int n0) {
  return [=](const Coord& c) { return sphere_input(seed, input_id, c, n0); };
}

struct CheckerboardProfile {
  std::vector<double> c;       // c_v, v = 0..L-1
  std::vector<double> ntk;     // Theta(v), v = 0..L-1
  double ntk_diagonal = 0.0;   // Theta at p = p', x = y
  std::vector<double> ntk_normalized;
  std::string label;
};

namespace detail {

// Theta along a chain of pairs whose valuation drops by one per layer going
// down, starting at layer `bottom` (1-based) where the pair shares no edges.
// Weighted by lambda_W, lambda_b of the parameters feeding each layer.
inline double chain_theta(const std::vector<double>& c, const std::vector<double>& dot, int bottom, int v,
                          double beta, const LayerWeights& w) {
  const double b2 = beta * beta;
  double t = w.bias[bottom - 1] * b2;
  for (int k = 1; k <= v; ++k) {
    const int layer = bottom + k;
    t = w.weight[layer - 1] * (c[k] - b2) + w.bias[layer - 1] * b2 + dot[k - 1] * t;
  }
  return t;
}

inline double diagonal_theta(double r, double beta, int L, const LayerWeights& w) {
  const double b2 = beta * beta;
  double t = 0.0;
  for (int l = 1; l <= L; ++l) t = w.weight[l - 1] * (1.0 - b2) + w.bias[l - 1] * b2 + (l > 1 ? r * t : 0.0);
  return t;
}

inline LayerWeights unit_weights(int L) { return {std::vector<double>(L, 1.0), std::vector<double>(L, 1.0)}; }

inline CheckerboardProfile weighted_checkerboard(const Nonlinearity& sigma, double beta, int L, const LayerWeights& w,
                                                 DualMethod method, const QuadratureSpec& quad) {
  check_beta(beta);
  if (L < 1) throw DomainError("checkerboard_profile: depth must be at least 1");
  const double b2 = beta * beta, w2 = 1.0 - b2;
  CheckerboardProfile p;
  std::vector<double> dot;  // dot[k] = (1 - beta^2) R_sigma'(c_k)
  p.c.push_back(b2);
  for (int v = 1; v < L; ++v) {
    dot.push_back(w2 * pair_expectation(sigma, 1.0, 1.0, p.c.back(), true, method, quad));
    p.c.push_back(b2 + w2 * pair_expectation(sigma, 1.0, 1.0, p.c.back(), false, method, quad));
  }
  for (int v = 0; v < L; ++v) p.ntk.push_back(chain_theta(p.c, dot, L - v, v, beta, w));
  const double r = characteristic_value(sigma, beta, method, quad);
  p.ntk_diagonal = diagonal_theta(r, beta, L, w);
  if (!(p.ntk_diagonal > 0.0)) throw NumericalError("checkerboard_profile: diagonal NTK is not positive");
  for (double t : p.ntk) p.ntk_normalized.push_back(t / p.ntk_diagonal);
  return p;
}

}  // namespace detail

/// Constant kernels between positions p != p' of a borderless DC-NN with
/// v = v_s(p - p') < L: Sigma = c_v, Theta = Theta(v), for standardized sigma.
inline CheckerboardProfile checkerboard_profile(const Nonlinearity& sigma, double beta, int L,
                                                DualMethod method = DualMethod::automatic,
                                                const QuadratureSpec& quad = {}) {
  CheckerboardProfile p = detail::weighted_checkerboard(sigma, beta, L, detail::unit_weights(L), method, quad);
  p.label = "unweighted";
  return p;
}

inline void write_checkerboard_csv(std::ostream& os, const CheckerboardProfile& p, const std::string& metadata = {}) {
  CsvWriter csv(os);
  if (!metadata.empty()) csv.comment(metadata);
  csv.header({"v", "c_v", "ntk", "ntk_normalized"});
  for (std::size_t v = 0; v < p.c.size(); ++v) {
    csv.cell(static_cast<int>(v)).cell(p.c[v]).cell(p.ntk[v]).cell(p.ntk_normalized[v]);
    csv.end_row();
  }
  csv.cell("diag").cell(1.0).cell(p.ntk_diagonal).cell(1.0);
  csv.end_row();
}

inline nlohmann::json checkerboard_to_json(const CheckerboardProfile& p) {
  return {{"label", p.label},
          {"c", json_reals(p.c)},
          {"ntk", json_reals(p.ntk)},
          {"ntk_diagonal", json_real(p.ntk_diagonal)},
          {"ntk_normalized", json_reals(p.ntk_normalized)}};
}

struct ValuationBoundRow {
  int depth = 0;
  int v = 0;
  double theta = 0.0;  // normalized
  double upper = 0.0;
  double lower = 0.0;
};

struct CheckerboardOrderReport {
  double r = 0.0;
  double c1 = 0.0;
  bool fitted = false;  // c1 fitted on these rows rather than supplied
  std::vector<ValuationBoundRow> rows;
  bool upper_holds = true;
  bool lower_holds = true;
  bool monotone = true;  // theta(v) nondecreasing in v
  bool passed = false;
};

/// Order regime sandwich on the checkerboard profile:
///   (1 - r^(v+1)) / (1 - r^L) - C1 (v+1) r^v <= theta(v) <= (1 - r^(v+1)) / (1 - r^L).
/// When c1 is absent it is fitted as the smallest constant satisfying the
/// lower bound on every row.
inline CheckerboardOrderReport checkerboard_order_check(const Nonlinearity& sigma, double beta,
                                                        std::span<const int> depths,
                                                        std::optional<double> c1 = std::nullopt,
                                                        double tol = 1e-12) {
  CheckerboardOrderReport rep;
  rep.r = characteristic_value(sigma, beta);
  if (!(rep.r < 1.0 - kEdgeTolerance)) throw PreconditionError("checkerboard_order_check requires r < 1");
  const double r = rep.r;
  for (int L : depths) {
    const CheckerboardProfile p = checkerboard_profile(sigma, beta, L);
    for (int v = 0; v < L; ++v) {
      ValuationBoundRow row;
      row.depth = L;
      row.v = v;
      row.theta = p.ntk_normalized[v];
      row.upper = (1.0 - std::pow(r, v + 1)) / (1.0 - std::pow(r, L));
      if (v > 0 && row.theta < p.ntk_normalized[v - 1] - tol) rep.monotone = false;
      rep.rows.push_back(row);
    }
  }
  if (c1) {
    rep.c1 = *c1;
  } else {
    rep.fitted = true;
    for (const auto& row : rep.rows)
      rep.c1 = std::max(rep.c1, (row.upper - row.theta) / ((row.v + 1) * std::pow(r, row.v)));
  }
  for (auto& row : rep.rows) {
    row.lower = row.upper - rep.c1 * (row.v + 1) * std::pow(r, row.v);
    if (row.theta > row.upper + tol) rep.upper_holds = false;
    if (row.theta < row.lower - tol) rep.lower_holds = false;
  }
  rep.passed = rep.upper_holds && rep.lower_holds && rep.monotone;
  return rep;
}

/// Learning-rate weights for W^(m), b^(m), m = 0..L-1.
enum class LrMode { appendix, maintext };

inline std::string to_string(LrMode m) { return m == LrMode::appendix ? "appendix" : "maintext"; }

/// appendix: both W^(m) and b^(m) scaled by S^-(m+1)/2.
/// maintext: W^(m) by S^-m/2, b^(m) by S^-(m+1)/2.
inline LayerWeights ldlr_weights(int L, double S, LrMode mode) {
  if (!(S >= 1.0)) throw DomainError("stride product must be at least 1");
  LayerWeights w;
  for (int m = 0; m < L; ++m) {
    w.weight.push_back(std::pow(S, -(mode == LrMode::appendix ? m + 1 : m) / 2.0));
    w.bias.push_back(std::pow(S, -(m + 1) / 2.0));
  }
  return w;
}

/// S^(-L/2) (1 - (sqrt(S) r)^L) / (1 - sqrt(S) r), or S^(-L/2) L when sqrt(S) r = 1.
inline double ldlr_diagonal_closed_form(double r, double S, int L) {
  const double x = std::sqrt(S) * r;
  const double scale = std::pow(S, -L / 2.0);
  if (std::abs(x - 1.0) <= 1e-12) return scale * L;
  return scale * (1.0 - std::pow(x, L)) / (1.0 - x);
}

/// Checkerboard profile of the learning-rate-weighted NTK.
inline CheckerboardProfile ldlr_ntk(const Nonlinearity& sigma, double beta, double S, int L, LrMode mode,
                                   DualMethod method = DualMethod::automatic, const QuadratureSpec& quad = {}) {
  CheckerboardProfile p = detail::weighted_checkerboard(sigma, beta, L, ldlr_weights(L, S, mode), method, quad);
  p.label = to_string(mode);
  return p;
}

struct LdlrBoundReport {
  double x = 0.0;   // sqrt(S) r
  double c = 0.0;   // fitted constant of the lower bound
  std::vector<ValuationBoundRow> rows;
  bool upper_holds = true;
};

/// (1 - x^(k+1)) / (1 - x^L) >= theta(k) >= that - C x^k / |1 - x^L|, x = sqrt(S) r,
/// with C fitted as the smallest constant that satisfies the lower side.
inline LdlrBoundReport ldlr_bound_check(const CheckerboardProfile& p, double r, double S, double tol = 1e-12) {
  LdlrBoundReport rep;
  const int L = static_cast<int>(p.ntk.size());
  rep.x = std::sqrt(S) * r;
  const double denom = 1.0 - std::pow(rep.x, L);
  for (int k = 0; k < L; ++k) {
    ValuationBoundRow row;
    row.depth = L;
    row.v = k;
    row.theta = p.ntk_normalized[k];
    row.upper = std::abs(denom) > 0.0 ? (1.0 - std::pow(rep.x, k + 1)) / denom : (k + 1.0) / L;
    rep.c = std::max(rep.c, (row.upper - row.theta) * std::abs(denom) / std::pow(rep.x, k));
    if (row.theta > row.upper + tol) rep.upper_holds = false;
    rep.rows.push_back(row);
  }
  for (auto& row : rep.rows) row.lower = row.upper - rep.c * std::pow(rep.x, row.v) / std::abs(denom);
  return rep;
}

enum class ContributionKind { weight, bias };

/// Contribution of W^(m) or b^(m) to Theta^(L) on the requested output pairs
/// (all pairs of I_L when empty).
inline KernelField layerwise_ntk(const PositionGraph& g, const Nonlinearity& sigma, double beta, const InputField& x,
                                 const InputField& y, int m, ContributionKind kind,
                                 std::vector<PositionPair> pairs = {}, GraphKernelOptions options = {}) {
  const int L = g.depth();
  if (m < 0 || m >= L) throw DomainError("layerwise_ntk: parameter layer must satisfy 0 <= m < L");
  GraphKernelEvaluator ev(g, sigma, beta, x, y, options);
  LayerWeights w{std::vector<double>(L, 0.0), std::vector<double>(L, 0.0)};
  (kind == ContributionKind::weight ? w.weight : w.bias)[m] = 1.0;
  const int set = ev.add_weights(std::move(w));
  if (pairs.empty()) pairs = all_pairs(g, L);
  KernelField f;
  f.layer = L;
  for (auto [p, pp] : pairs) f.entries[{p, pp}] = ev.theta(L, p, pp, set);
  return f;
}

struct ChaosPairResult {
  Coord p{}, pp{};
  std::vector<int> depths;
  std::vector<double> theta;  // normalized, one per depth
  LinearFit fit;
  double rate = 0.0;
  bool decays = false;
  bool excluded = false;  // p = p' with identical inputs
  std::string note;
};

struct ChaosCheckReport {
  double r = 0.0;
  std::vector<ChaosPairResult> pairs;
  bool passed = false;
};

/// Chaos regime: normalized Theta^(L,pp')(x, y) over increasing depth on a
/// borderless DC-NN whose output patch holds the requested pairs; each pair's
/// |theta| must decay with fitted rate below 1.
inline ChaosCheckReport dcnn_chaos_check(const Nonlinearity& sigma, double beta, DCNNSpec spec,
                                         const InputSource& x, const InputSource& y, int n0,
                                         const std::vector<std::pair<Coord, Coord>>& pairs,
                                         std::span<const int> depths, bool same_input = false) {
  ChaosCheckReport rep;
  rep.r = characteristic_value(sigma, beta);
  if (!(rep.r > 1.0 + kEdgeTolerance)) throw PreconditionError("dcnn_chaos_check requires r > 1");
  spec.border = BorderMode::borderless;
  std::vector<Coord> patch;
  for (const auto& [a, b] : pairs) {
    patch.push_back(a);
    patch.push_back(b);
  }
  spec.output_patch = patch;
  rep.pairs.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rep.pairs[i].p = pairs[i].first;
    rep.pairs[i].pp = pairs[i].second;
    if (same_input && pairs[i].first == pairs[i].second) {
      rep.pairs[i].excluded = true;
      rep.pairs[i].note = "diagonal pair with identical inputs: theta = 1";
    }
  }
  for (int L : depths) {
    spec.depth = L;
    const PositionGraph g = build(spec);
    const InputField fx = make_input_field(g, n0, x);
    const InputField fy = same_input ? fx : make_input_field(g, n0, y);
    GraphKernelEvaluator exy(g, sigma, beta, fx, fy), exx(g, sigma, beta, fx, fx), eyy(g, sigma, beta, fy, fy);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      auto& res = rep.pairs[i];
      if (res.excluded) continue;
      const int p = *g.find(L, pairs[i].first), pp = *g.find(L, pairs[i].second);
      const double t = exy.theta(L, p, pp) / std::sqrt(exx.theta(L, p, p) * eyy.theta(L, pp, pp));
      res.depths.push_back(L);
      res.theta.push_back(t);
    }
  }
  bool ok = true;
  for (auto& res : rep.pairs) {
    if (res.excluded) continue;
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < res.depths.size(); ++k)
      if (std::abs(res.theta[k]) > 1e-14) {
        xs.push_back(res.depths[k]);
        ys.push_back(std::log(std::abs(res.theta[k])));
      }
    if (xs.size() >= 2) {
      res.fit = fit_line(xs, ys);
      res.rate = std::exp(res.fit.slope);
      res.decays = res.rate < 1.0;
    } else {
      res.decays = true;
      res.note = "below float noise";
    }
    ok = ok && res.decays;
  }
  rep.passed = ok;
  return rep;
}

struct BorderRow {
  long long position = 0;
  double sigma_diag = 0.0;
  double ntk_diag = 0.0;
};

struct BorderProfile {
  Parametrization parametrization = Parametrization::standard;
  int depth = 0;
  std::vector<BorderRow> rows;           // layer L, positions 0..extent-1
  std::vector<double> sigma00, ntk00;    // recursion at p = 0, layers 1..L
  std::vector<double> closed_sigma00, closed_ntk00;  // empty when no closed form applies
  std::string note;
};

/// (beta^2 + (r/2)^(l+1)) / (1 - r/2) for the standardized ReLU, r = 1 - beta^2.
inline double border_sigma00_closed_form(double beta, int l) {
  const double h = (1.0 - beta * beta) / 2.0;
  return (beta * beta + std::pow(h, l + 1)) / (1.0 - h);
}

/// beta^2 (1 - (r/2)^L) / (1 - r/2)^2 + L (r/2)^(L+1) / (1 - r/2).
inline double border_ntk00_closed_form(double beta, int L) {
  const double h = (1.0 - beta * beta) / 2.0;
  return beta * beta * (1.0 - std::pow(h, L)) / ((1.0 - h) * (1.0 - h)) + L * std::pow(h, L + 1) / (1.0 - h);
}

/// The half-line setting: I_l = {0..extent-1} on every layer, stride 2,
/// taps s q - p in [-3, 0], so P(p) = {floor(p/2) - 1, floor(p/2)} clipped
/// to the half-line and P(0) = {0}.
inline DCNNSpec border_spec(int L, long long extent, Parametrization param) {
  DCNNSpec spec;
  spec.dim = 1;
  spec.stride = {2};
  spec.window = {2};
  spec.offset = {-3};
  spec.depth = L;
  spec.border = BorderMode::bounded;
  spec.extents.assign(L + 1, std::vector<long long>{extent});
  spec.parametrization = param;
  return spec;
}

inline BorderProfile border_profile(const Nonlinearity& sigma, double beta, int L, Parametrization param,
                                    long long extent = 0, int n0 = 4, std::uint64_t seed = 1) {
  check_beta(beta);
  if (L < 1) throw DomainError("border_profile: depth must be at least 1");
  if (extent <= 0) extent = std::min<long long>((2ll << std::min(L, 14)) + 8, 1 << 15);
  const DCNNSpec spec = border_spec(L, extent, param);
  const PositionGraph g = build(spec);
  const InputField x = make_input_field(g, n0, random_sphere_source(seed, 0, n0));
  GraphKernelOptions opt;
  opt.parametrization = param;
  opt.general_marginals = true;
  GraphKernelEvaluator ev(g, sigma, beta, x, x, opt);
  BorderProfile out;
  out.parametrization = param;
  out.depth = L;
  for (int p = 0; p < g.size(L); ++p)
    out.rows.push_back(BorderRow{g.layer(L)[p][0], ev.sigma(L, p, p), ev.theta(L, p, p)});
  for (int l = 1; l <= L; ++l) {
    const int p0 = *g.find(l, Coord{});
    out.sigma00.push_back(ev.sigma(l, p0, p0));
    out.ntk00.push_back(ev.theta(l, p0, p0));
  }
  const bool std_relu = sigma.kind() == NonlinKind::relu && std::abs(sigma.shift()) == 0.0 &&
                        std::abs(sigma.scale() * sigma.scale() - 2.0) <= 1e-12;
  if (param == Parametrization::standard) {
    if (std_relu) {
      for (int l = 1; l <= L; ++l) {
        out.closed_sigma00.push_back(border_sigma00_closed_form(beta, l));
        out.closed_ntk00.push_back(border_ntk00_closed_form(beta, l));
      }
    } else {
      out.note = "closed forms apply to the standardized ReLU only; recursion values reported";
    }
  } else {
    const double r = characteristic_value(sigma, beta);
    for (int l = 1; l <= L; ++l) {
      out.closed_sigma00.push_back(1.0);
      out.closed_ntk00.push_back(diagonal_ntk_closed_form(r, l));
    }
  }
  return out;
}

inline void write_border_csv(std::ostream& os, const BorderProfile& b, const std::string& metadata = {}) {
  CsvWriter csv(os);
  if (!metadata.empty()) csv.comment(metadata);
  csv.header({"position", "sigma_diag", "ntk_diag", "parametrization"});
  for (const auto& row : b.rows) {
    csv.cell(static_cast<long long>(row.position)).cell(row.sigma_diag).cell(row.ntk_diag).cell(to_string(b.parametrization));
    csv.end_row();
  }
}

}  // namespace ntk
