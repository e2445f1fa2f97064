#pragma once

// Graph-based networks: layered position sets I_0..I_L, parent maps
// P(p) subset of I_l for p in I_{l+1}, and a weight-sharing relation on edges
// stored as per-layer class ids. The limiting kernels follow
//   Sigma^(1,pp') = beta^2 + (1-beta^2)/(N n0) sum chi x_q.y_q'
//   Sigma^(l+1,pp') = beta^2 + (1-beta^2)/N sum chi L^sigma(Sigma^(l,qq'))
//   Theta^(l+1,pp') = Sigma^(l+1,pp') + (1-beta^2)/N sum chi Theta^(l,qq') L^sigma'(Sigma^(l,qq'))
// where the double sum runs over q in P(p), q' in P(p') with shared edges, and
// N = sqrt(|P(p)||P(p')|) (graph-based) or a fixed constant (standard).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ntk/errors.hpp"
#include "ntk/nonlin.hpp"

namespace ntk {

inline constexpr int kMaxDim = 3;
using Coord = std::array<long long, kMaxDim>;

struct Edge {
  int parent = 0;  // index into the previous layer
  int cls = 0;     // sharing class id, unique within the layer
};

class PositionGraph {
 public:
  PositionGraph() = default;
  PositionGraph(int dim, std::vector<std::vector<Coord>> layers, std::vector<std::vector<std::vector<Edge>>> parents)
      : dim_(dim), layers_(std::move(layers)), parents_(std::move(parents)) {
    if (dim_ < 1 || dim_ > kMaxDim) throw DomainError("position dimension must be 1, 2 or 3");
    if (layers_.size() < 2) throw DomainError("a graph needs at least an input and an output layer");
    if (parents_.size() != layers_.size() - 1) throw DomainError("parents must be given for layers 1..L");
    index_.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t i = 0; i < layers_[l].size(); ++i)
        if (!index_[l].emplace(layers_[l][i], static_cast<int>(i)).second)
          throw DomainError("duplicate position in layer " + std::to_string(l));
    class_count_.assign(layers_.size(), 0);
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      if (parents_[l - 1].size() != layers_[l].size())
        throw DomainError("parent list count does not match layer " + std::to_string(l));
      for (const auto& edges : parents_[l - 1])
        for (const Edge& e : edges) class_count_[l] = std::max(class_count_[l], e.cls + 1);
    }
  }

  int dim() const { return dim_; }
  int depth() const { return static_cast<int>(layers_.size()) - 1; }
  const std::vector<Coord>& layer(int l) const { return layers_.at(l); }
  int size(int l) const { return static_cast<int>(layers_.at(l).size()); }

  /// Edges into position p of layer l (1 <= l <= L).
  const std::vector<Edge>& parents(int l, int p) const { return parents_.at(l - 1).at(p); }

  /// Number of sharing classes among edges into layer l.
  int class_count(int l) const { return class_count_.at(l); }

  std::optional<int> find(int l, const Coord& c) const {
    auto it = index_.at(l).find(c);
    if (it == index_.at(l).end()) return std::nullopt;
    return it->second;
  }

  int max_parent_count() const {
    std::size_t m = 0;
    for (const auto& layer : parents_)
      for (const auto& edges : layer) m = std::max(m, edges.size());
    return static_cast<int>(m);
  }

 private:
  struct CoordHash {
    std::size_t operator()(const Coord& c) const {
      std::size_t h = 1469598103934665603ull;
      for (long long v : c) h = (h ^ static_cast<std::size_t>(v)) * 1099511628211ull;
      return h;
    }
  };

  int dim_ = 1;
  std::vector<std::vector<Coord>> layers_;
  std::vector<std::vector<std::vector<Edge>>> parents_;
  std::vector<std::unordered_map<Coord, int, CoordHash>> index_;
  std::vector<int> class_count_;
};

/// Incremental construction. Edges given the same sharing key within a layer
/// are merged into one class (union-find); share() merges arbitrary edges.
class GraphBuilder {
 public:
  GraphBuilder(int dim, int depth) : dim_(dim), layers_(depth + 1), edges_(depth) {
    if (depth < 1) throw DomainError("depth must be at least 1");
  }

  int add_position(int l, const Coord& c) {
    layers_.at(l).push_back(c);
    if (l >= 1) edges_.at(l - 1).emplace_back();
    return static_cast<int>(layers_[l].size()) - 1;
  }

  /// Adds q -> p into layer l and returns an edge handle.
  std::size_t add_edge(int l, int p, int q, std::optional<long long> key = std::nullopt) {
    auto& layer = edges_.at(l - 1);
    if (p < 0 || p >= static_cast<int>(layer.size())) throw DomainError("add_edge: unknown child position");
    if (q < 0 || q >= static_cast<int>(layers_.at(l - 1).size())) throw DomainError("add_edge: unknown parent position");
    const std::size_t id = flat_.size();
    flat_.push_back({l, p, static_cast<int>(layer[p].size())});
    layer[p].push_back(Edge{q, 0});
    uf_.push_back(id);
    if (key) {
      auto [it, inserted] = keyed_.emplace(std::make_pair(l, *key), id);
      if (!inserted) unite(it->second, id);
    }
    return id;
  }

  void share(std::size_t a, std::size_t b) {
    if (flat_.at(a).layer != flat_.at(b).layer) throw DomainError("shared edges must lie in the same layer");
    unite(a, b);
  }

  PositionGraph build() {
    std::vector<std::map<std::size_t, int>> ids(edges_.size());
    for (std::size_t e = 0; e < flat_.size(); ++e) {
      const auto& f = flat_[e];
      auto& m = ids[f.layer - 1];
      const std::size_t root = find(e);
      auto it = m.find(root);
      if (it == m.end()) it = m.emplace(root, static_cast<int>(m.size())).first;
      edges_[f.layer - 1][f.child][f.slot].cls = it->second;
    }
    return PositionGraph(dim_, layers_, edges_);
  }

 private:
  struct Flat {
    int layer, child, slot;
  };
  std::size_t find(std::size_t e) {
    while (uf_[e] != e) {
      uf_[e] = uf_[uf_[e]];
      e = uf_[e];
    }
    return e;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) uf_[std::max(a, b)] = std::min(a, b);
  }

  int dim_;
  std::vector<std::vector<Coord>> layers_;
  std::vector<std::vector<std::vector<Edge>>> edges_;
  std::vector<Flat> flat_;
  std::vector<std::size_t> uf_;
  std::map<std::pair<int, long long>, std::size_t> keyed_;
};

/// Fully-connected network as a graph: one position per layer, no sharing to resolve.
inline PositionGraph fc_graph(int depth) {
  GraphBuilder b(1, depth);
  b.add_position(0, Coord{});
  for (int l = 1; l <= depth; ++l) {
    b.add_position(l, Coord{});
    b.add_edge(l, 0, 0);
  }
  return b.build();
}

/// Violations of the graph invariants; empty when valid.
inline std::vector<std::string> validate(const PositionGraph& g) {
  std::vector<std::string> out;
  for (int l = 1; l <= g.depth(); ++l) {
    for (int p = 0; p < g.size(l); ++p) {
      const auto& edges = g.parents(l, p);
      const std::string where = "layer " + std::to_string(l) + " position " + std::to_string(p);
      if (edges.empty()) out.push_back(where + ": no parents");
      std::set<int> seen_parent, seen_class;
      for (const Edge& e : edges) {
        if (e.parent < 0 || e.parent >= g.size(l - 1)) out.push_back(where + ": parent index out of range");
        if (!seen_parent.insert(e.parent).second) out.push_back(where + ": repeated parent");
        if (e.cls < 0) out.push_back(where + ": negative class id");
        if (!seen_class.insert(e.cls).second) out.push_back(where + ": two incoming edges share a class");
      }
    }
  }
  return out;
}

/// P^k(p) for p in layer l, as indices into layer l - k.
inline std::set<int> ancestors(const PositionGraph& g, int p, int l, int k) {
  if (k < 0 || k > l) throw DomainError("ancestors: need 0 <= k <= layer");
  if (l > g.depth() || p < 0 || p >= g.size(l)) throw DomainError("ancestors: unknown position");
  std::set<int> cur{p};
  for (int step = 0; step < k; ++step) {
    std::set<int> next;
    for (int q : cur)
      for (const Edge& e : g.parents(l - step, q)) next.insert(e.parent);
    cur = std::move(next);
  }
  return cur;
}

inline nlohmann::json graph_to_json(const PositionGraph& g) {
  nlohmann::json j;
  j["dim"] = g.dim();
  j["layers"] = nlohmann::json::array();
  for (int l = 0; l <= g.depth(); ++l) {
    nlohmann::json layer = nlohmann::json::array();
    for (const Coord& c : g.layer(l)) layer.push_back(std::vector<long long>(c.begin(), c.begin() + g.dim()));
    j["layers"].push_back(layer);
  }
  j["parents"] = nlohmann::json::array();
  for (int l = 1; l <= g.depth(); ++l) {
    nlohmann::json layer = nlohmann::json::array();
    for (int p = 0; p < g.size(l); ++p) {
      nlohmann::json edges = nlohmann::json::array();
      for (const Edge& e : g.parents(l, p)) edges.push_back({e.parent, e.cls});
      layer.push_back(edges);
    }
    j["parents"].push_back(layer);
  }
  return j;
}

inline PositionGraph graph_from_json(const nlohmann::json& j) {
  try {
    const int dim = j.at("dim").get<int>();
    if (dim < 1 || dim > kMaxDim) throw DomainError("graph json: dim must be 1..3");
    std::vector<std::vector<Coord>> layers;
    for (const auto& layer : j.at("layers")) {
      std::vector<Coord> coords;
      for (const auto& c : layer) {
        const auto v = c.get<std::vector<long long>>();
        if (static_cast<int>(v.size()) != dim) throw DomainError("graph json: coordinate arity mismatch");
        Coord cc{};
        std::copy(v.begin(), v.end(), cc.begin());
        coords.push_back(cc);
      }
      layers.push_back(std::move(coords));
    }
    std::vector<std::vector<std::vector<Edge>>> parents;
    for (const auto& layer : j.at("parents")) {
      std::vector<std::vector<Edge>> lp;
      for (const auto& edges : layer) {
        std::vector<Edge> es;
        for (const auto& e : edges) es.push_back(Edge{e.at(0).get<int>(), e.at(1).get<int>()});
        lp.push_back(std::move(es));
      }
      parents.push_back(std::move(lp));
    }
    return PositionGraph(dim, std::move(layers), std::move(parents));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("graph json: ") + e.what());
  }
}

/// Inputs indexed like layer 0 of a graph.
struct InputField {
  int n0 = 1;
  std::vector<std::vector<double>> values;

  bool on_sphere(double tol = 1e-8) const {
    for (const auto& v : values) {
      double s = 0.0;
      for (double a : v) s += a * a;
      if (std::abs(s / n0 - 1.0) > tol) return false;
    }
    return true;
  }
};

/// Entries of one layer's kernel, keyed by (p, p') position indices.
struct KernelField {
  int layer = 0;
  std::map<std::pair<int, int>, double> entries;

  double at(int p, int pp) const {
    auto it = entries.find({p, pp});
    if (it == entries.end()) throw DomainError("kernel field entry was not materialized");
    return it->second;
  }
};

enum class Parametrization { graph_based, standard };

inline std::string to_string(Parametrization p) {
  return p == Parametrization::graph_based ? "graph-based" : "standard";
}

/// Per-layer learning-rate weights: parameters W^(m), b^(m) feed layer m + 1.
struct LayerWeights {
  std::vector<double> weight;  // lambda_W(m), m = 0..L-1
  std::vector<double> bias;    // lambda_b(m)
};

struct GraphKernelOptions {
  Parametrization parametrization = Parametrization::graph_based;
  /// Constant N for the standard parametrization; 0 uses the largest parent count.
  double fixed_norm = 0.0;
  /// Graph-based parametrization only: compute marginal variances instead of
  /// requiring a standardized sigma and on-sphere inputs.
  bool general_marginals = false;
  DualMethod method = DualMethod::automatic;
  QuadratureSpec quadrature{};
};

/// Memoized evaluation of Sigma and Theta for one (graph, sigma, beta, x, y).
/// Only the entries reachable from requested pairs are computed. Not
/// thread-safe; use one evaluator per thread.
class GraphKernelEvaluator {
 public:
  enum Pairing : std::uint64_t { xy = 0, xx = 1, yy = 2 };

  GraphKernelEvaluator(const PositionGraph& graph, Nonlinearity sigma, double beta, InputField x, InputField y,
                       GraphKernelOptions options = {})
      : g_(graph), sigma_(std::move(sigma)), beta_(beta), x_(std::move(x)), y_(std::move(y)), opt_(options) {
    check_beta(beta_);
    if (g_.depth() > 250) throw DomainError("graph depth above 250 is not supported");
    for (int l = 0; l <= g_.depth(); ++l)
      if (g_.size(l) >= (1 << 22)) throw DomainError("layer too large for kernel evaluation");
    if (static_cast<int>(x_.values.size()) != g_.size(0) || static_cast<int>(y_.values.size()) != g_.size(0))
      throw DomainError("input field size does not match layer 0");
    if (x_.n0 != y_.n0 || x_.n0 < 1) throw DomainError("input dimension mismatch");
    for (const auto* f : {&x_, &y_})
      for (const auto& v : f->values)
        if (static_cast<int>(v.size()) != f->n0) throw DomainError("input vector dimension mismatch");
    const auto bad = validate(g_);
    if (!bad.empty()) throw DomainError("invalid graph: " + bad.front());
    if (opt_.parametrization == Parametrization::standard) {
      fixed_norm_ = opt_.fixed_norm > 0.0 ? opt_.fixed_norm : g_.max_parent_count();
      unit_marginals_ = false;
    } else {
      unit_marginals_ = !opt_.general_marginals;
      if (unit_marginals_) {
        const double m2 = gaussian_moment(sigma_, 2, opt_.method, opt_.quadrature);
        if (std::abs(m2 - 1.0) > 1e-8)
          throw PreconditionError("unit marginals require a standardized sigma (E[sigma^2] = " +
                                  std::to_string(m2) + ")");
        if (!x_.on_sphere() || !y_.on_sphere())
          throw PreconditionError("unit marginals require inputs on the sqrt(n0)-sphere");
      }
    }
    weights_.push_back(LayerWeights{std::vector<double>(g_.depth(), 1.0), std::vector<double>(g_.depth(), 1.0)});
  }

  const PositionGraph& graph() const { return g_; }
  double beta() const { return beta_; }

  /// Registers learning-rate weights and returns the id to pass to theta().
  int add_weights(LayerWeights w) {
    if (static_cast<int>(w.weight.size()) != g_.depth() || static_cast<int>(w.bias.size()) != g_.depth())
      throw DomainError("layer weights must have one entry per layer");
    if (weights_.size() >= 1024) throw DomainError("too many weight sets");
    weights_.push_back(std::move(w));
    return static_cast<int>(weights_.size()) - 1;
  }

  /// Sigma^(l,pp')(x, y), p and p' indices into layer l.
  double sigma(int l, int p, int pp) { return sigma_impl(xy, l, p, pp); }
  double sigma_xx(int l, int p, int pp) { return sigma_impl(xx, l, p, pp); }
  double sigma_yy(int l, int p, int pp) { return sigma_impl(yy, l, p, pp); }

  /// Theta^(l,pp')(x, y) under the weight set `set` (0 = unweighted NTK).
  double theta(int l, int p, int pp, int set = 0) {
    check(l, p, pp);
    if (set < 0 || set >= static_cast<int>(weights_.size())) throw DomainError("unknown weight set");
    const std::uint64_t k = key(xy, static_cast<std::uint64_t>(set), l, p, pp);
    if (auto it = theta_memo_.find(k); it != theta_memo_.end()) return it->second;
    const auto& w = weights_[set];
    const double b2 = beta_ * beta_, w2 = 1.0 - b2;
    const double s = sigma(l, p, pp);
    double value = w.weight[l - 1] * (s - b2) + w.bias[l - 1] * b2;
    if (l > 1) {
      double acc = 0.0;
      for_each_shared_pair(l, p, pp, [&](int q, int qq) { acc += theta(l - 1, q, qq, set) * dot_dual(l - 1, q, qq); });
      value += w2 / norm(l, p, pp) * acc;
    }
    theta_memo_.emplace(k, value);
    return value;
  }

  /// Materialized Sigma entries for the (x, y) pairing at layer l.
  KernelField sigma_entries(int l) const { return collect(sigma_memo_, xy, 0, l); }
  KernelField theta_entries(int l, int set = 0) const {
    return collect(theta_memo_, xy, static_cast<std::uint64_t>(set), l);
  }

 private:
  static std::uint64_t key(std::uint64_t pairing, std::uint64_t set, int l, int p, int pp) {
    return (pairing << 62) | (set << 52) | (static_cast<std::uint64_t>(l) << 44) |
           (static_cast<std::uint64_t>(p) << 22) | static_cast<std::uint64_t>(pp);
  }

  static KernelField collect(const std::unordered_map<std::uint64_t, double>& memo, std::uint64_t pairing,
                             std::uint64_t set, int l) {
    KernelField f;
    f.layer = l;
    const std::uint64_t mask22 = (1ull << 22) - 1;
    for (const auto& [k, v] : memo) {
      if ((k >> 62) != pairing || ((k >> 52) & 1023) != set || static_cast<int>((k >> 44) & 255) != l) continue;
      f.entries.emplace(std::make_pair(static_cast<int>((k >> 22) & mask22), static_cast<int>(k & mask22)), v);
    }
    return f;
  }

  void check(int l, int p, int pp) const {
    if (l < 1 || l > g_.depth()) throw DomainError("layer out of range");
    if (p < 0 || p >= g_.size(l) || pp < 0 || pp >= g_.size(l)) throw DomainError("position out of range");
  }

  double norm(int l, int p, int pp) const {
    if (opt_.parametrization == Parametrization::standard) return fixed_norm_;
    return std::sqrt(static_cast<double>(g_.parents(l, p).size()) * static_cast<double>(g_.parents(l, pp).size()));
  }

  // Calls f(q, q') for q in P(p), q' in P(p') whose edges share a class.
  template <typename F>
  void for_each_shared_pair(int l, int p, int pp, F&& f) {
    const auto& ep = g_.parents(l, p);
    const auto& epp = g_.parents(l, pp);
    if (ep.size() * epp.size() <= 64) {
      for (const Edge& a : ep)
        for (const Edge& b : epp)
          if (a.cls == b.cls) f(a.parent, b.parent);
      return;
    }
    std::unordered_map<int, int> by_class;
    by_class.reserve(epp.size());
    for (const Edge& b : epp) by_class.emplace(b.cls, b.parent);
    for (const Edge& a : ep)
      if (auto it = by_class.find(a.cls); it != by_class.end()) f(a.parent, it->second);
  }

  const std::vector<double>& left(Pairing pr, int q) const { return pr == yy ? y_.values[q] : x_.values[q]; }
  const std::vector<double>& right(Pairing pr, int q) const { return pr == xx ? x_.values[q] : y_.values[q]; }

  double sigma_impl(Pairing pr, int l, int p, int pp) {
    check(l, p, pp);
    const std::uint64_t k = key(pr, 0, l, p, pp);
    if (auto it = sigma_memo_.find(k); it != sigma_memo_.end()) return it->second;
    const double b2 = beta_ * beta_, w2 = 1.0 - b2;
    double acc = 0.0;
    if (l == 1) {
      for_each_shared_pair(1, p, pp, [&](int q, int qq) {
        const auto& a = left(pr, q);
        const auto& b = right(pr, qq);
        acc += std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
      });
      acc /= x_.n0;
    } else {
      for_each_shared_pair(l, p, pp, [&](int q, int qq) { acc += pair_dual(pr, l - 1, q, qq, false); });
    }
    const double value = b2 + w2 / norm(l, p, pp) * acc;
    sigma_memo_.emplace(k, value);
    return value;
  }

  // L^g for the Gaussian pair with covariance Sigma^(l,qq') under pairing pr.
  double pair_dual(Pairing pr, int l, int q, int qq, bool derivative) {
    const double c = sigma_impl(pr, l, q, qq);
    if (unit_marginals_) return pair_expectation(sigma_, 1.0, 1.0, c, derivative, opt_.method, opt_.quadrature);
    const Pairing p0 = pr == yy ? yy : xx;
    const Pairing p1 = pr == xx ? xx : yy;
    const double v0 = sigma_impl(p0, l, q, q);
    const double v1 = sigma_impl(p1, l, qq, qq);
    const double bound = std::sqrt(v0 * v1);
    return pair_expectation(sigma_, v0, v1, std::clamp(c, -bound, bound), derivative, opt_.method, opt_.quadrature);
  }

  double dot_dual(int l, int q, int qq) {
    const std::uint64_t k = key(xy, 0, l, q, qq);
    if (auto it = dot_memo_.find(k); it != dot_memo_.end()) return it->second;
    const double v = pair_dual(xy, l, q, qq, true);
    dot_memo_.emplace(k, v);
    return v;
  }

  const PositionGraph& g_;
  Nonlinearity sigma_;
  double beta_;
  InputField x_, y_;
  GraphKernelOptions opt_;
  double fixed_norm_ = 1.0;
  bool unit_marginals_ = true;
  std::vector<LayerWeights> weights_;
  std::unordered_map<std::uint64_t, double> sigma_memo_, theta_memo_, dot_memo_;
};

using PositionPair = std::pair<int, int>;

inline std::vector<PositionPair> all_pairs(const PositionGraph& g, int l) {
  std::vector<PositionPair> out;
  for (int p = 0; p < g.size(l); ++p)
    for (int pp = 0; pp < g.size(l); ++pp) out.emplace_back(p, pp);
  return out;
}

/// Sigma^(l) fields for l = 1..L, materializing the ancestor closure of the
/// requested output pairs (all pairs of I_L when empty).
inline std::vector<KernelField> sigma_field(const PositionGraph& g, const Nonlinearity& sigma, double beta,
                                            const InputField& x, const InputField& y,
                                            std::vector<PositionPair> pairs = {}, GraphKernelOptions options = {}) {
  GraphKernelEvaluator ev(g, sigma, beta, x, y, options);
  if (pairs.empty()) pairs = all_pairs(g, g.depth());
  for (auto [p, pp] : pairs) ev.sigma(g.depth(), p, pp);
  std::vector<KernelField> out;
  for (int l = 1; l <= g.depth(); ++l) out.push_back(ev.sigma_entries(l));
  return out;
}

/// Theta^(L) on the requested pairs (all pairs of I_L when empty).
inline KernelField ntk_field(const PositionGraph& g, const Nonlinearity& sigma, double beta, const InputField& x,
                             const InputField& y, std::vector<PositionPair> pairs = {},
                             GraphKernelOptions options = {}) {
  GraphKernelEvaluator ev(g, sigma, beta, x, y, options);
  if (pairs.empty()) pairs = all_pairs(g, g.depth());
  KernelField f;
  f.layer = g.depth();
  for (auto [p, pp] : pairs) f.entries[{p, pp}] = ev.theta(g.depth(), p, pp);
  return f;
}

}  // namespace ntk
