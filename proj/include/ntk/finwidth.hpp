#pragma once

// Finite-width networks under the NTK parametrization, with exact
// reverse-mode parameter gradients and the empirical NTK
//   Theta(o, o') = sum_theta d f_o / d theta * d f_o' / d theta.
//
// Layer l+1 preactivation at position r:
//   a~(l+1, r) = beta b(l) + sqrt(1 - beta^2) / sqrt(N_r n_l) sum_{q in P(r)} W(l, cls(q->r)) a(l, q)
// with N_r = |P(r)| (graph-based) or a fixed constant (standard). Hidden
// layers may carry layer norm before or after sigma, or batch norm after it;
// both normalizations use the population standard deviation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
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
#include "ntk/parallel.hpp"
#include "ntk/random.hpp"

namespace ntk {

enum class NormKind { none, ln_post, ln_pre, bn_post };

inline std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::none: return "none";
    case NormKind::ln_post: return "ln-post";
    case NormKind::ln_pre: return "ln-pre";
    case NormKind::bn_post: return "bn-post";
  }
  return "?";
}

struct NetArchitecture {
  std::shared_ptr<const PositionGraph> graph;
  Nonlinearity sigma = Nonlinearity::relu();
  double beta = 0.0;
  std::vector<int> widths;      // n_0..n_L
  std::vector<NormKind> norms;  // per layer 0..L; only hidden layers 1..L-1 may be non-none
  Parametrization parametrization = Parametrization::graph_based;
  double fixed_norm = 0.0;      // standard parametrization; 0 = largest parent count
  /// A normalized vector with exactly zero variance raises NumericalError, or,
  /// when set, is mapped to zero with zero gradient (the epsilon -> 0 limit).
  bool zero_degenerate_norm = false;

  int depth() const { return graph->depth(); }
};

/// Fully-connected architecture: n0 inputs, the given hidden widths, n_out outputs.
inline NetArchitecture fc_net(const Nonlinearity& sigma, double beta, int n0, std::vector<int> hidden, int n_out = 1,
                              NormKind hidden_norm = NormKind::none) {
  NetArchitecture a;
  a.graph = std::make_shared<const PositionGraph>(fc_graph(static_cast<int>(hidden.size()) + 1));
  a.sigma = sigma;
  a.beta = beta;
  a.widths.push_back(n0);
  for (int w : hidden) a.widths.push_back(w);
  a.widths.push_back(n_out);
  a.norms.assign(a.widths.size(), NormKind::none);
  for (std::size_t l = 1; l + 1 < a.widths.size(); ++l) a.norms[l] = hidden_norm;
  return a;
}

inline void validate(const NetArchitecture& a) {
  if (!a.graph) throw DomainError("network has no graph");
  check_beta(a.beta);
  const int L = a.depth();
  if (static_cast<int>(a.widths.size()) != L + 1) throw DomainError("widths must list n_0..n_L");
  for (int w : a.widths)
    if (w < 1) throw DomainError("widths must be positive");
  if (static_cast<int>(a.norms.size()) != L + 1) throw DomainError("norm markers must list layers 0..L");
  if (a.norms[0] != NormKind::none || a.norms[L] != NormKind::none)
    throw DomainError("normalization applies to hidden layers only");
  const auto bad = validate(*a.graph);
  if (!bad.empty()) throw DomainError("invalid graph: " + bad.front());
}

/// Dense [input][position][channel] array.
struct Field {
  int N = 0, P = 0, C = 0;
  std::vector<double> v;

  Field() = default;
  Field(int n, int p, int c) : N(n), P(p), C(c), v(static_cast<std::size_t>(n) * p * c, 0.0) {}
  double* at(int m, int q) { return v.data() + (static_cast<std::size_t>(m) * P + q) * C; }
  const double* at(int m, int q) const { return v.data() + (static_cast<std::size_t>(m) * P + q) * C; }
};

class FiniteNet {
 public:
  FiniteNet(NetArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)), seed_(seed) {
    validate(arch_);
    const PositionGraph& g = *arch_.graph;
    const int L = g.depth();
    norm_const_ = arch_.fixed_norm > 0.0 ? arch_.fixed_norm : g.max_parent_count();
    weight_offset_.resize(L);
    bias_offset_.resize(L);
    class_edges_.resize(L);
    children_.resize(L);
    std::size_t off = 0;
    for (int m = 0; m < L; ++m) {
      const int classes = g.class_count(m + 1);
      const std::size_t block = static_cast<std::size_t>(arch_.widths[m + 1]) * arch_.widths[m];
      for (int c = 0; c < classes; ++c) {
        weight_offset_[m].push_back(off);
        off += block;
      }
      bias_offset_[m] = off;
      off += arch_.widths[m + 1];
      class_edges_[m].resize(classes);
      children_[m].resize(g.size(m));
      for (int r = 0; r < g.size(m + 1); ++r)
        for (const Edge& e : g.parents(m + 1, r)) {
          class_edges_[m][e.cls].push_back({e.parent, r});
          children_[m][e.parent].push_back({r, e.cls});
        }
    }
    params_.resize(off);
    for (int m = 0; m < L; ++m) {
      const std::size_t block = static_cast<std::size_t>(arch_.widths[m + 1]) * arch_.widths[m];
      for (std::size_t c = 0; c < weight_offset_[m].size(); ++c)
        GaussianStream(seed_, static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(2 * m))
            .fill(std::span<double>(params_.data() + weight_offset_[m][c], block));
      GaussianStream(seed_, 0, static_cast<std::uint32_t>(2 * m + 1))
          .fill(std::span<double>(params_.data() + bias_offset_[m], arch_.widths[m + 1]));
    }
  }

  const NetArchitecture& arch() const { return arch_; }
  const PositionGraph& graph() const { return *arch_.graph; }
  std::uint64_t seed() const { return seed_; }
  int depth() const { return arch_.depth(); }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  /// W(m, c): n_{m+1} x n_m row-major, for parameter layer m = 0..L-1.
  std::size_t weight_offset(int m, int cls) const { return weight_offset_.at(m).at(cls); }
  std::size_t bias_offset(int m) const { return bias_offset_.at(m); }
  const double* weight(int m, int cls) const { return params_.data() + weight_offset(m, cls); }
  const double* bias(int m) const { return params_.data() + bias_offset(m); }

  /// sqrt(1 - beta^2) / sqrt(N_r n_m) for edges into position r of layer m + 1.
  double coef(int m, int r) const {
    const double N = arch_.parametrization == Parametrization::standard
                         ? norm_const_
                         : static_cast<double>(graph().parents(m + 1, r).size());
    return std::sqrt(1.0 - arch_.beta * arch_.beta) / std::sqrt(N * arch_.widths[m]);
  }

  struct ClassEdge {
    int q, r;
  };
  struct Child {
    int r, cls;
  };
  const std::vector<ClassEdge>& class_edges(int m, int cls) const { return class_edges_[m][cls]; }
  const std::vector<Child>& children(int m, int q) const { return children_[m][q]; }
  int class_count(int m) const { return static_cast<int>(class_edges_[m].size()); }

 private:
  NetArchitecture arch_;
  std::uint64_t seed_;
  double norm_const_ = 1.0;
  std::vector<double> params_;
  std::vector<std::vector<std::size_t>> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::vector<std::vector<std::vector<ClassEdge>>> class_edges_;
  std::vector<std::vector<std::vector<Child>>> children_;
};

/// Deterministic in the seed: parameters are drawn i.i.d. N(0, 1) from the
/// counter-based generator keyed by (seed, class, layer and kind, index).
inline FiniteNet sample(const NetArchitecture& arch, std::uint64_t seed) { return FiniteNet(arch, seed); }

struct ForwardPass {
  std::vector<Field> pre;    // pre[l] = a~(l), l = 1..L
  std::vector<Field> act;    // act[l] = a(l), l = 0..L-1
  std::vector<Field> z;      // sigma input, l = 1..L-1 (a~ or its layer norm)
  std::vector<Field> s;      // sigma(z) before any post normalization
  std::vector<std::vector<double>> scale;  // normalization standard deviations per layer
  long long relu_zero_hits = 0;
  long long degenerate_norms = 0;
};

namespace detail {

// Population standardization of n values spaced `stride` apart; returns the
// std, or 0 for a degenerate vector when `allow_zero` (output set to 0).
inline double standardize_strided(const double* in, double* out, int n, std::size_t stride, bool allow_zero = false) {
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += in[i * stride];
  mean /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) var += (in[i * stride] - mean) * (in[i * stride] - mean);
  var /= n;
  if (!(var > 0.0)) {
    if (!allow_zero) throw NumericalError("normalization of a zero-variance activation vector");
    for (int i = 0; i < n; ++i) out[i * stride] = 0.0;
    return 0.0;
  }
  const double sd = std::sqrt(var);
  for (int i = 0; i < n; ++i) out[i * stride] = (in[i * stride] - mean) / sd;
  return sd;
}

// Backward of y = standardize(x): dx = (dy - mean dy - y mean(dy y)) / sd.
inline void standardize_backward(const double* y, double* g, int n, std::size_t stride, double sd) {
  if (sd == 0.0) {
    for (int i = 0; i < n; ++i) g[i * stride] = 0.0;
    return;
  }
  double mg = 0.0, mgy = 0.0;
  for (int i = 0; i < n; ++i) {
    mg += g[i * stride];
    mgy += g[i * stride] * y[i * stride];
  }
  mg /= n;
  mgy /= n;
  for (int i = 0; i < n; ++i) g[i * stride] = (g[i * stride] - mg - y[i * stride] * mgy) / sd;
}

}  // namespace detail

inline ForwardPass forward(const FiniteNet& net, const std::vector<InputField>& batch) {
  const auto& a = net.arch();
  const PositionGraph& g = net.graph();
  const int L = net.depth();
  const int N = static_cast<int>(batch.size());
  if (N == 0) throw DomainError("forward: empty batch");
  ForwardPass fp;
  fp.pre.resize(L + 1);
  fp.act.resize(L);
  fp.z.resize(L);
  fp.s.resize(L);
  fp.scale.resize(L);
  fp.act[0] = Field(N, g.size(0), a.widths[0]);
  for (int m = 0; m < N; ++m) {
    if (batch[m].n0 != a.widths[0] || static_cast<int>(batch[m].values.size()) != g.size(0))
      throw DomainError("forward: input shape does not match the network");
    for (int q = 0; q < g.size(0); ++q) {
      if (static_cast<int>(batch[m].values[q].size()) != a.widths[0]) throw DomainError("forward: input dimension");
      std::copy(batch[m].values[q].begin(), batch[m].values[q].end(), fp.act[0].at(m, q));
    }
  }
  const bool relu = a.sigma.kind() == NonlinKind::relu;
  const bool zero_ok = a.zero_degenerate_norm;
  for (int l = 1; l <= L; ++l) {
    const int m_layer = l - 1;
    const int nin = a.widths[l - 1], nout = a.widths[l];
    Field pre(N, g.size(l), nout);
    const double* b = net.bias(m_layer);
    for (int m = 0; m < N; ++m)
      for (int r = 0; r < g.size(l); ++r) {
        double* out = pre.at(m, r);
        for (int k = 0; k < nout; ++k) out[k] = a.beta * b[k];
        const double c = net.coef(m_layer, r);
        for (const Edge& e : g.parents(l, r)) {
          const double* W = net.weight(m_layer, e.cls);
          const double* x = fp.act[l - 1].at(m, e.parent);
          for (int k = 0; k < nout; ++k) {
            const double* row = W + static_cast<std::size_t>(k) * nin;
            double acc = 0.0;
            for (int j = 0; j < nin; ++j) acc += row[j] * x[j];
            out[k] += c * acc;
          }
        }
      }
    fp.pre[l] = std::move(pre);
    if (l == L) break;
    const NormKind nk = a.norms[l];
    const int P = g.size(l);
    Field z = fp.pre[l];
    if (nk == NormKind::ln_pre) {
      for (int m = 0; m < N; ++m)
        for (int q = 0; q < P; ++q)
          fp.scale[l].push_back(detail::standardize_strided(fp.pre[l].at(m, q), z.at(m, q), nout, 1, zero_ok));
    }
    Field s(N, P, nout);
    for (std::size_t i = 0; i < z.v.size(); ++i) {
      if (relu && z.v[i] == 0.0) ++fp.relu_zero_hits;
      s.v[i] = a.sigma(z.v[i]);
    }
    Field act = s;
    if (nk == NormKind::ln_post) {
      for (int m = 0; m < N; ++m)
        for (int q = 0; q < P; ++q)
          fp.scale[l].push_back(detail::standardize_strided(s.at(m, q), act.at(m, q), nout, 1, zero_ok));
    } else if (nk == NormKind::bn_post) {
      const std::size_t stride = static_cast<std::size_t>(P) * nout;
      for (int q = 0; q < P; ++q)
        for (int k = 0; k < nout; ++k)
          fp.scale[l].push_back(detail::standardize_strided(s.at(0, q) + k, act.at(0, q) + k, N, stride, zero_ok));
    }
    for (double sd : fp.scale[l])
      if (sd == 0.0) ++fp.degenerate_norms;
    fp.z[l] = std::move(z);
    fp.s[l] = std::move(s);
    fp.act[l] = std::move(act);
  }
  return fp;
}

/// One network output: input index in the batch, output position index, channel.
struct OutputIndex {
  int input = 0;
  int position = 0;
  int channel = 0;
};

/// delta[l] = d f_o / d a~(l) for l = 1..L; active[l][m] marks inputs with
/// non-zero entries (inputs couple only through batch norm).
struct BackwardPass {
  std::vector<Field> delta;
  std::vector<std::vector<char>> active;
};

inline BackwardPass backward(const FiniteNet& net, const ForwardPass& fp, const OutputIndex& o) {
  const auto& a = net.arch();
  const PositionGraph& g = net.graph();
  const int L = net.depth();
  const int N = fp.pre[L].N;
  if (o.input < 0 || o.input >= N || o.position < 0 || o.position >= g.size(L) || o.channel < 0 ||
      o.channel >= a.widths[L])
    throw DomainError("backward: output index out of range");
  BackwardPass bp;
  bp.delta.resize(L + 1);
  bp.active.assign(L + 1, std::vector<char>(N, 0));
  bp.delta[L] = Field(N, g.size(L), a.widths[L]);
  bp.delta[L].at(o.input, o.position)[o.channel] = 1.0;
  bp.active[L][o.input] = 1;
  for (int l = L - 1; l >= 1; --l) {
    const int m_layer = l;  // parameters feeding layer l + 1
    const int n = a.widths[l], nnext = a.widths[l + 1];
    const int P = g.size(l);
    Field grad(N, P, n);  // d f / d a(l)
    for (int m = 0; m < N; ++m) {
      if (!bp.active[l + 1][m]) continue;
      for (int q = 0; q < P; ++q) {
        double* gq = grad.at(m, q);
        for (const auto& ch : net.children(m_layer, q)) {
          const double* d = bp.delta[l + 1].at(m, ch.r);
          const double c = net.coef(m_layer, ch.r);
          const double* W = net.weight(m_layer, ch.cls);
          for (int k = 0; k < nnext; ++k) {
            const double dk = c * d[k];
            if (dk == 0.0) continue;
            const double* row = W + static_cast<std::size_t>(k) * n;
            for (int j = 0; j < n; ++j) gq[j] += dk * row[j];
          }
        }
      }
    }
    std::vector<char> act = bp.active[l + 1];
    const NormKind nk = a.norms[l];
    if (nk == NormKind::ln_post) {
      std::size_t idx = 0;
      for (int m = 0; m < N; ++m)
        for (int q = 0; q < P; ++q, ++idx)
          if (act[m]) detail::standardize_backward(fp.act[l].at(m, q), grad.at(m, q), n, 1, fp.scale[l][idx]);
    } else if (nk == NormKind::bn_post) {
      std::fill(act.begin(), act.end(), 1);
      const std::size_t stride = static_cast<std::size_t>(P) * n;
      std::size_t idx = 0;
      for (int q = 0; q < P; ++q)
        for (int k = 0; k < n; ++k, ++idx)
          detail::standardize_backward(fp.act[l].at(0, q) + k, grad.at(0, q) + k, N, stride, fp.scale[l][idx]);
    }
    for (int m = 0; m < N; ++m) {
      if (!act[m]) continue;
      for (int q = 0; q < P; ++q) {
        double* gq = grad.at(m, q);
        const double* zq = fp.z[l].at(m, q);
        for (int j = 0; j < n; ++j) gq[j] *= a.sigma.derivative(zq[j]);
      }
    }
    if (nk == NormKind::ln_pre) {
      std::size_t idx = 0;
      for (int m = 0; m < N; ++m)
        for (int q = 0; q < P; ++q, ++idx)
          if (act[m]) detail::standardize_backward(fp.z[l].at(m, q), grad.at(m, q), n, 1, fp.scale[l][idx]);
    }
    bp.delta[l] = std::move(grad);
    bp.active[l] = std::move(act);
  }
  return bp;
}

/// Materialized gradient of one output with respect to every parameter.
inline std::vector<double> parameter_gradient(const FiniteNet& net, const ForwardPass& fp, const BackwardPass& bp) {
  const auto& a = net.arch();
  const int L = net.depth();
  std::vector<double> grad(net.parameter_count(), 0.0);
  for (int m = 0; m < L; ++m) {
    const int nin = a.widths[m], nout = a.widths[m + 1];
    const Field& d = bp.delta[m + 1];
    for (int mm = 0; mm < d.N; ++mm) {
      if (!bp.active[m + 1][mm]) continue;
      for (int c = 0; c < net.class_count(m); ++c) {
        double* G = grad.data() + net.weight_offset(m, c);
        for (const auto& e : net.class_edges(m, c)) {
          const double cf = net.coef(m, e.r);
          const double* dr = d.at(mm, e.r);
          const double* x = fp.act[m].at(mm, e.q);
          for (int k = 0; k < nout; ++k) {
            const double dk = cf * dr[k];
            if (dk == 0.0) continue;
            double* row = G + static_cast<std::size_t>(k) * nin;
            for (int j = 0; j < nin; ++j) row[j] += dk * x[j];
          }
        }
      }
      double* gb = grad.data() + net.bias_offset(m);
      for (int r = 0; r < d.P; ++r) {
        const double* dr = d.at(mm, r);
        for (int k = 0; k < nout; ++k) gb[k] += a.beta * dr[k];
      }
    }
  }
  return grad;
}

struct EmpiricalKernel {
  std::vector<OutputIndex> outputs;
  int size = 0;
  std::vector<double> values;                      // size x size, row-major
  std::vector<std::vector<double>> weight_part;    // per parameter layer m
  std::vector<std::vector<double>> bias_part;
  nlohmann::json metadata;

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * size + j]; }
};

namespace detail {

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Adds the weight and bias contributions of parameter layer m to every output
// pair. For a sharing class with edges e = (q -> r),
//   W(A, B) = sum_{e, e'} sum_{a, b} c_r c_r' <dA(a, r), dB(b, r')> <x(a, q), x(b, q')>,
// evaluated as sum_{b, e'} c_r' <dB(b, r'), U_A(b, e')> with
// U_A(b, e') = sum_{a, e} c_r <x(a, q), x(b, q')> dA(a, r).
inline void accumulate_layer(const FiniteNet& net, const ForwardPass& fp, int m, const std::vector<BackwardPass>& bps,
                             std::vector<double>& weight, std::vector<double>& bias) {
  const auto& arch = net.arch();
  const int nin = arch.widths[m], nout = arch.widths[m + 1];
  const int M = static_cast<int>(bps.size());
  const Field& x = fp.act[m];
  const int N = x.N;
  for (int c = 0; c < net.class_count(m); ++c) {
    const auto& edges = net.class_edges(m, c);
    const int E = static_cast<int>(edges.size());
    const int NE = N * E;
    std::vector<double> xg(static_cast<std::size_t>(NE) * NE);
    for (int a = 0; a < N; ++a)
      for (int e = 0; e < E; ++e)
        for (int b = 0; b < N; ++b)
          for (int f = 0; f < E; ++f)
            xg[static_cast<std::size_t>(a * E + e) * NE + b * E + f] = dot(x.at(a, edges[e].q), x.at(b, edges[f].q), nin);
    std::vector<std::vector<double>> U(M);
    for (int i = 0; i < M; ++i) {
      const BackwardPass& A = bps[i];
      U[i].assign(static_cast<std::size_t>(NE) * nout, 0.0);
      for (int a = 0; a < N; ++a) {
        if (!A.active[m + 1][a]) continue;
        for (int e = 0; e < E; ++e) {
          const double* d = A.delta[m + 1].at(a, edges[e].r);
          const double ce = net.coef(m, edges[e].r);
          const double* row = xg.data() + static_cast<std::size_t>(a * E + e) * NE;
          for (int k = 0; k < NE; ++k) {
            const double w = ce * row[k];
            double* u = U[i].data() + static_cast<std::size_t>(k) * nout;
            for (int j = 0; j < nout; ++j) u[j] += w * d[j];
          }
        }
      }
    }
    for (int j = 0; j < M; ++j) {
      const BackwardPass& B = bps[j];
      for (int i = 0; i <= j; ++i) {
        double w = 0.0;
        for (int b = 0; b < N; ++b) {
          if (!B.active[m + 1][b]) continue;
          for (int f = 0; f < E; ++f)
            w += net.coef(m, edges[f].r) *
                 dot(B.delta[m + 1].at(b, edges[f].r), U[i].data() + static_cast<std::size_t>(b * E + f) * nout, nout);
        }
        weight[static_cast<std::size_t>(i) * M + j] += w;
        if (i != j) weight[static_cast<std::size_t>(j) * M + i] += w;
      }
    }
  }
  std::vector<std::vector<double>> sums(M, std::vector<double>(nout, 0.0));
  for (int i = 0; i < M; ++i) {
    const Field& d = bps[i].delta[m + 1];
    for (int a = 0; a < d.N; ++a) {
      if (!bps[i].active[m + 1][a]) continue;
      for (int r = 0; r < d.P; ++r)
        for (int k = 0; k < nout; ++k) sums[i][k] += d.at(a, r)[k];
    }
  }
  const double b2 = arch.beta * arch.beta;
  for (int i = 0; i < M; ++i)
    for (int j = i; j < M; ++j)
      bias[static_cast<std::size_t>(i) * M + j] = bias[static_cast<std::size_t>(j) * M + i] =
          b2 * dot(sums[i].data(), sums[j].data(), nout);
}

}  // namespace detail

inline nlohmann::json net_metadata(const FiniteNet& net, const ForwardPass& fp) {
  return {{"widths", net.arch().widths},
          {"seed", net.seed()},
          {"prng", kPrngName},
          {"beta", net.arch().beta},
          {"parametrization", to_string(net.arch().parametrization)},
          {"relu_derivative_at_zero", 0.0},
          {"relu_zero_hits", fp.relu_zero_hits},
          {"degenerate_norms", fp.degenerate_norms},
          {"degenerate_norm_policy", net.arch().zero_degenerate_norm ? "zero" : "error"}};
}

/// All outputs (input, position, channel) of the batch.
inline std::vector<OutputIndex> all_outputs(const FiniteNet& net, int batch) {
  std::vector<OutputIndex> out;
  const int L = net.depth();
  for (int i = 0; i < batch; ++i)
    for (int p = 0; p < net.graph().size(L); ++p)
      for (int k = 0; k < net.arch().widths[L]; ++k) out.push_back({i, p, k});
  return out;
}

/// Empirical NTK by factorized gradient inner products, with a per-layer split.
inline EmpiricalKernel empirical_ntk(const FiniteNet& net, const std::vector<InputField>& batch,
                                     std::vector<OutputIndex> outputs = {}) {
  const ForwardPass fp = forward(net, batch);
  if (outputs.empty()) outputs = all_outputs(net, static_cast<int>(batch.size()));
  const int M = static_cast<int>(outputs.size());
  const int L = net.depth();
  std::vector<BackwardPass> bps;
  bps.reserve(M);
  for (const auto& o : outputs) bps.push_back(backward(net, fp, o));
  EmpiricalKernel K;
  K.outputs = outputs;
  K.size = M;
  K.values.assign(static_cast<std::size_t>(M) * M, 0.0);
  K.weight_part.assign(L, std::vector<double>(static_cast<std::size_t>(M) * M, 0.0));
  K.bias_part = K.weight_part;
  for (int m = 0; m < L; ++m) {
    detail::accumulate_layer(net, fp, m, bps, K.weight_part[m], K.bias_part[m]);
    for (std::size_t k = 0; k < K.values.size(); ++k) K.values[k] += K.weight_part[m][k] + K.bias_part[m][k];
  }
  K.metadata = net_metadata(net, fp);
  return K;
}

/// Empirical NTK from materialized gradients; slower, used to cross-check.
inline EmpiricalKernel empirical_ntk_materialized(const FiniteNet& net, const std::vector<InputField>& batch,
                                                  std::vector<OutputIndex> outputs = {}) {
  const ForwardPass fp = forward(net, batch);
  if (outputs.empty()) outputs = all_outputs(net, static_cast<int>(batch.size()));
  const int M = static_cast<int>(outputs.size());
  std::vector<std::vector<double>> grads;
  for (const auto& o : outputs) grads.push_back(parameter_gradient(net, fp, backward(net, fp, o)));
  EmpiricalKernel K;
  K.outputs = outputs;
  K.size = M;
  K.values.assign(static_cast<std::size_t>(M) * M, 0.0);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j)
      K.values[static_cast<std::size_t>(i) * M + j] =
          std::inner_product(grads[i].begin(), grads[i].end(), grads[j].begin(), 0.0);
  K.metadata = net_metadata(net, fp);
  return K;
}

struct GradientCheck {
  double relative_error = 0.0;  // |g_fd - g|_2 / |g|_2
  double gradient_norm = 0.0;
  std::size_t parameters = 0;
};

/// Central differences with step h on every parameter against the reverse-mode gradient.
inline GradientCheck gradient_check(const FiniteNet& net, const std::vector<InputField>& batch, const OutputIndex& o,
                                    double h = 1e-5) {
  const ForwardPass fp = forward(net, batch);
  const std::vector<double> g = parameter_gradient(net, fp, backward(net, fp, o));
  FiniteNet probe = net;
  auto params = probe.parameters();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double fplus = forward(probe, batch).pre.back().at(o.input, o.position)[o.channel];
    params[i] = saved - h;
    const double fminus = forward(probe, batch).pre.back().at(o.input, o.position)[o.channel];
    params[i] = saved;
    const double fd = (fplus - fminus) / (2.0 * h);
    num += (fd - g[i]) * (fd - g[i]);
    den += g[i] * g[i];
  }
  GradientCheck c;
  c.gradient_norm = std::sqrt(den);
  c.relative_error = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  c.parameters = params.size();
  return c;
}

/// (1/N) 1^T Theta 1 over the batch for output position 0, channel 0.
inline double batch_constant_rayleigh(const FiniteNet& net, const std::vector<InputField>& batch) {
  std::vector<OutputIndex> outs;
  for (int i = 0; i < static_cast<int>(batch.size()); ++i) outs.push_back({i, 0, 0});
  const EmpiricalKernel K = empirical_ntk(net, batch, outs);
  return std::accumulate(K.values.begin(), K.values.end(), 0.0) / static_cast<double>(batch.size());
}

/// Constant Rayleigh quotient of a network with batch norm after the last nonlinearity.
inline double bn_rayleigh_check(const FiniteNet& net, const std::vector<InputField>& batch) {
  const int L = net.depth();
  if (L < 2 || net.arch().norms[L - 1] != NormKind::bn_post)
    throw PreconditionError("bn_rayleigh_check needs batch norm after the last nonlinearity");
  if (batch.size() < 2) throw PreconditionError("bn_rayleigh_check needs a batch of at least two inputs");
  return batch_constant_rayleigh(net, batch);
}

/// Empirical Sigma^(L, pp')(x_i, x_j) from the last hidden activations.
inline double empirical_sigma(const FiniteNet& net, const ForwardPass& fp, int i, int j, int p = 0, int pp = 0) {
  const int L = net.depth();
  const auto& a = net.arch();
  const PositionGraph& g = net.graph();
  const int n = a.widths[L - 1];
  const double b2 = a.beta * a.beta;
  double acc = 0.0;
  for (const Edge& e : g.parents(L, p))
    for (const Edge& f : g.parents(L, pp))
      if (e.cls == f.cls) acc += detail::dot(fp.act[L - 1].at(i, e.parent), fp.act[L - 1].at(j, f.parent), n);
  const double c0 = net.coef(L - 1, p), c1 = net.coef(L - 1, pp);
  // coef^2 already carries (1 - beta^2) / (N n).
  return b2 + c0 * c1 * acc;
}

/// n0-dimensional FC inputs on the sphere, one position each.
inline std::vector<InputField> fc_inputs(const std::vector<std::vector<double>>& xs) {
  std::vector<InputField> out;
  for (const auto& x : xs) out.push_back(InputField{static_cast<int>(x.size()), {x}});
  return out;
}

/// Deterministic random inputs on the sqrt(n0)-sphere.
inline std::vector<std::vector<double>> random_sphere_inputs(int count, int n0, std::uint64_t seed) {
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < count; ++i) {
    const GaussianStream g(seed, static_cast<std::uint32_t>(i), 0x53504845u);
    std::vector<double> v(n0);
    g.fill(v);
    double s = 0.0;
    for (double a : v) s += a * a;
    const double scale = std::sqrt(n0 / s);
    for (double& a : v) a *= scale;
    xs.push_back(std::move(v));
  }
  return xs;
}

struct McRow {
  int width = 0;
  int samples = 0;
  double mean_error = 0.0;  // mean over seeds and entries of |empirical - limit|
  double sd_error = 0.0;
  double median_relative_error = 0.0;
};

struct McSweepResult {
  std::vector<McRow> rows;
  LinearFit fit;  // log mean error against log width
  std::vector<double> limits;
  nlohmann::json metadata;
};

/// Monte Carlo convergence of the FC empirical NTK to its limit. Hidden
/// widths all equal the swept width; seeds are seed0 .. seed0 + seeds - 1.
inline McSweepResult mc_sweep(const Nonlinearity& sigma, double beta, int L, const std::vector<int>& widths,
                              int seeds, std::uint64_t seed0, const std::vector<std::vector<double>>& inputs,
                              int jobs = 1) {
  if (L < 2) throw DomainError("mc_sweep: depth must be at least 2");
  if (widths.empty() || seeds < 1 || inputs.empty()) throw DomainError("mc_sweep: empty sweep");
  const int n0 = static_cast<int>(inputs.front().size());
  const int N = static_cast<int>(inputs.size());
  FCArchitecture limit_arch{sigma, beta, L, n0};
  std::vector<std::pair<int, int>> entries;
  McSweepResult res;
  for (int i = 0; i < N; ++i)
    for (int j = i; j < N; ++j) {
      entries.emplace_back(i, j);
      res.limits.push_back(fc_ntk(limit_arch, overlap(inputs[i], inputs[j])));
    }
  const auto batch = fc_inputs(inputs);
  const std::size_t E = entries.size();
  const std::size_t cells = widths.size() * static_cast<std::size_t>(seeds);
  std::vector<std::vector<double>> errors(cells), rel(cells);
  parallel_for(cells, jobs, [&](std::size_t cell) {
    const int w = widths[cell / seeds];
    const std::uint64_t seed = seed0 + cell % seeds;
    const FiniteNet net = sample(fc_net(sigma, beta, n0, std::vector<int>(L - 1, w)), seed);
    const EmpiricalKernel K = empirical_ntk(net, batch);
    for (std::size_t e = 0; e < E; ++e) {
      const double err = std::abs(K.at(entries[e].first, entries[e].second) - res.limits[e]);
      errors[cell].push_back(err);
      rel[cell].push_back(err / std::abs(res.limits[e]));
    }
  });
  std::vector<double> lx, ly;
  for (std::size_t wi = 0; wi < widths.size(); ++wi) {
    std::vector<double> all, allrel;
    for (int s = 0; s < seeds; ++s) {
      const auto& e = errors[wi * seeds + s];
      all.insert(all.end(), e.begin(), e.end());
      const auto& r = rel[wi * seeds + s];
      allrel.insert(allrel.end(), r.begin(), r.end());
    }
    McRow row;
    row.width = widths[wi];
    row.samples = static_cast<int>(all.size());
    row.mean_error = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
    double var = 0.0;
    for (double v : all) var += (v - row.mean_error) * (v - row.mean_error);
    row.sd_error = all.size() > 1 ? std::sqrt(var / (all.size() - 1)) : 0.0;
    std::sort(allrel.begin(), allrel.end());
    const std::size_t h = allrel.size() / 2;
    row.median_relative_error = allrel.size() % 2 ? allrel[h] : 0.5 * (allrel[h - 1] + allrel[h]);
    res.rows.push_back(row);
    lx.push_back(std::log(static_cast<double>(row.width)));
    ly.push_back(std::log(row.mean_error));
  }
  if (lx.size() >= 2) res.fit = fit_line(lx, ly);
  res.metadata = {{"depth", L},      {"beta", beta},   {"seeds", seeds}, {"seed0", seed0},
                  {"inputs", N},     {"n0", n0},       {"prng", kPrngName},
                  {"width_growth", "simultaneous"}};
  return res;
}

struct LnRow {
  int width = 0;
  double ln_post_vs_normalized_limit = 0.0;  // (a) against the normalized-sigma limit
  double ln_post_vs_normalized_net = 0.0;    // (a) against (b) with the same parameters
  double ln_pre_vs_plain_limit = 0.0;        // (c) against the plain limit
  double plain_vs_limit = 0.0;               // (d) against its own limit: the noise floor
};

struct LnReport {
  std::vector<LnRow> rows;
  bool post_shrinks = false;
  nlohmann::json metadata;
};

/// Layer norm after sigma against nonlinearity normalization, and layer norm
/// before sigma against the plain network, through the empirical last-layer
/// Sigma^(L). Each deviation is the mean over seeds of the largest
/// |empirical - reference| over input pairs.
inline LnReport ln_equivalence_check(const Nonlinearity& sigma, double beta, int L, const std::vector<int>& widths,
                                     int seeds, std::uint64_t seed0, const std::vector<std::vector<double>>& inputs) {
  if (L < 2) throw DomainError("ln_equivalence_check: depth must be at least 2");
  const int n0 = static_cast<int>(inputs.front().size());
  const int N = static_cast<int>(inputs.size());
  const Nonlinearity normalized = normalize(sigma);
  const FCArchitecture plain_limit{sigma, beta, L, n0}, norm_limit{normalized, beta, L, n0};
  std::vector<std::vector<double>> lim_plain(N, std::vector<double>(N)), lim_norm = lim_plain;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      const double rho = overlap(inputs[i], inputs[j]);
      lim_plain[i][j] = activation_kernel(plain_limit, rho, L);
      lim_norm[i][j] = activation_kernel(norm_limit, rho, L);
    }
  const auto batch = fc_inputs(inputs);
  LnReport rep;
  for (int w : widths) {
    LnRow row;
    row.width = w;
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t seed = seed0 + s;
      const std::vector<int> hidden(L - 1, w);
      const FiniteNet a = sample(fc_net(sigma, beta, n0, hidden, 1, NormKind::ln_post), seed);
      const FiniteNet b = sample(fc_net(normalized, beta, n0, hidden), seed);
      const FiniteNet c = sample(fc_net(sigma, beta, n0, hidden, 1, NormKind::ln_pre), seed);
      const FiniteNet d = sample(fc_net(sigma, beta, n0, hidden), seed);
      const ForwardPass fa = forward(a, batch), fb = forward(b, batch), fc = forward(c, batch), fd = forward(d, batch);
      double da = 0.0, dab = 0.0, dc = 0.0, dd = 0.0;
      for (int i = 0; i < N; ++i)
        for (int j = i; j < N; ++j) {
          const double ea = empirical_sigma(a, fa, i, j), eb = empirical_sigma(b, fb, i, j);
          const double ec = empirical_sigma(c, fc, i, j), ed = empirical_sigma(d, fd, i, j);
          da = std::max(da, std::abs(ea - lim_norm[i][j]));
          dab = std::max(dab, std::abs(ea - eb));
          dc = std::max(dc, std::abs(ec - lim_plain[i][j]));
          dd = std::max(dd, std::abs(ed - lim_plain[i][j]));
        }
      row.ln_post_vs_normalized_limit += da / seeds;
      row.ln_post_vs_normalized_net += dab / seeds;
      row.ln_pre_vs_plain_limit += dc / seeds;
      row.plain_vs_limit += dd / seeds;
    }
    rep.rows.push_back(row);
  }
  rep.post_shrinks = true;
  for (std::size_t k = 1; k < rep.rows.size(); ++k)
    if (!(rep.rows[k].ln_post_vs_normalized_limit < rep.rows[k - 1].ln_post_vs_normalized_limit))
      rep.post_shrinks = false;
  rep.metadata = {{"depth", L}, {"beta", beta}, {"seeds", seeds}, {"seed0", seed0}, {"inputs", N}, {"n0", n0},
                  {"prng", kPrngName}};
  return rep;
}

inline void write_mc_csv(std::ostream& os, const McSweepResult& r, const std::string& metadata = {}) {
  CsvWriter csv(os);
  if (!metadata.empty()) csv.comment(metadata);
  csv.header({"width", "samples", "mean_error", "sd_error", "median_relative_error"});
  for (const auto& row : r.rows) {
    csv.cell(row.width).cell(row.samples).cell(row.mean_error).cell(row.sd_error).cell(row.median_relative_error);
    csv.end_row();
  }
}

}  // namespace ntk
