#pragma once

// Gram matrices over (input, position) indices, a cyclic Jacobi symmetric
// eigensolver, the constant-vector Rayleigh quotient, and a DFT-based split of
// eigenvector energy by period valuation.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ntk/dcnn.hpp"
#include "ntk/errors.hpp"
#include "ntk/fc_kernel.hpp"
#include "ntk/io.hpp"
#include "ntk/netgraph.hpp"

namespace ntk {

/// Dense symmetric matrix with an (input, position) label per row.
struct GramMatrix {
  int size = 0;
  std::vector<double> data;                 // row-major
  std::vector<std::pair<int, int>> index;   // row -> (input, position)

  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * size + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * size + j]; }

  double frobenius() const {
    double s = 0.0;
    for (double v : data) s += v * v;
    return std::sqrt(s);
  }
  double trace() const {
    double t = 0.0;
    for (int i = 0; i < size; ++i) t += (*this)(i, i);
    return t;
  }
};

/// Fills K(a, b) = entry(a, b) for a <= b and mirrors the rest. Failures are
/// rethrown with the offending index pair.
template <typename Entry>
GramMatrix assemble(std::vector<std::pair<int, int>> index, Entry&& entry) {
  GramMatrix K;
  K.size = static_cast<int>(index.size());
  K.data.assign(static_cast<std::size_t>(K.size) * K.size, 0.0);
  K.index = std::move(index);
  for (int a = 0; a < K.size; ++a) {
    for (int b = a; b < K.size; ++b) {
      double v;
      try {
        v = entry(a, b);
      } catch (const std::exception& e) {
        throw NumericalError("gram entry (" + std::to_string(a) + ", " + std::to_string(b) + "): " + e.what());
      }
      K(a, b) = K(b, a) = v;
    }
  }
  return K;
}

/// Limiting FC Gram over inputs on the sphere.
inline GramMatrix assemble_fc(const FCArchitecture& arch, const std::vector<std::vector<double>>& inputs) {
  std::vector<std::pair<int, int>> index;
  for (int i = 0; i < static_cast<int>(inputs.size()); ++i) index.emplace_back(i, 0);
  return assemble(std::move(index), [&](int a, int b) { return fc_ntk(arch, overlap(inputs[a], inputs[b])); });
}

/// Limiting graph-network Gram over inputs x positions of the output layer,
/// optionally under learning-rate weights.
inline GramMatrix assemble_graph(const PositionGraph& g, const Nonlinearity& sigma, double beta,
                                 const std::vector<InputField>& inputs, GraphKernelOptions options = {},
                                 std::optional<LayerWeights> weights = std::nullopt) {
  const int L = g.depth();
  const int N = static_cast<int>(inputs.size()), P = g.size(L);
  std::vector<std::pair<int, int>> index;
  for (int i = 0; i < N; ++i)
    for (int p = 0; p < P; ++p) index.emplace_back(i, p);
  GramMatrix K;
  K.size = N * P;
  K.data.assign(static_cast<std::size_t>(K.size) * K.size, 0.0);
  K.index = index;
  for (int i = 0; i < N; ++i) {
    for (int j = i; j < N; ++j) {
      GraphKernelEvaluator ev(g, sigma, beta, inputs[i], inputs[j], options);
      const int set = weights ? ev.add_weights(*weights) : 0;
      for (int p = 0; p < P; ++p)
        for (int pp = (i == j ? p : 0); pp < P; ++pp) {
          const double v = ev.theta(L, p, pp, set);
          K(i * P + p, j * P + pp) = K(j * P + pp, i * P + p) = v;
        }
    }
  }
  return K;
}

struct SpectrumReport {
  std::vector<double> eigenvalues;                // descending
  std::vector<std::vector<double>> eigenvectors;  // eigenvectors[k] pairs with eigenvalues[k]
  double constant_rayleigh = 0.0;
  std::vector<std::vector<double>> checkerboard_energy;  // per eigenvector, buckets 0..L
  int sweeps = 0;
};

/// (1/M) 1^T K 1.
inline double constant_rayleigh(const GramMatrix& K) {
  if (K.size == 0) throw DomainError("constant_rayleigh: empty matrix");
  return std::accumulate(K.data.begin(), K.data.end(), 0.0) / K.size;
}

/// Cyclic Jacobi rotations until the off-diagonal norm is at most
/// 1e-12 * |K|_F. Eigenvectors are signed so the largest-magnitude entry is positive.
inline SpectrumReport eigendecompose(const GramMatrix& K, int max_sweeps = 100) {
  const int n = K.size;
  const double fro = K.frobenius();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs(K(i, j) - K(j, i)) > 1e-12 * std::max(1.0, fro))
        throw DomainError("eigendecompose: matrix is not symmetric");
  std::vector<double> a = K.data;
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  auto V = [&](int i, int j) -> double& { return v[static_cast<std::size_t>(i) * n + j]; };
  auto off_norm = [&] {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) s += A(i, j) * A(i, j);
    return std::sqrt(s);
  };
  SpectrumReport rep;
  const double target = 1e-12 * fro;
  while (off_norm() > target) {
    if (rep.sweeps >= max_sweeps) throw NumericalError("eigendecompose: Jacobi sweeps did not converge");
    ++rep.sweeps;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return A(x, x) > A(y, y); });
  for (int k : order) {
    rep.eigenvalues.push_back(A(k, k));
    std::vector<double> col(n);
    int arg = 0;
    for (int i = 0; i < n; ++i) {
      col[i] = V(i, k);
      if (std::abs(col[i]) > std::abs(col[arg])) arg = i;
    }
    if (col[arg] < 0.0)
      for (double& x : col) x = -x;
    rep.eigenvectors.push_back(std::move(col));
  }
  rep.constant_rayleigh = constant_rayleigh(K);
  return rep;
}

/// Splits the energy of values on a regular grid (row-major over `extents`)
/// by the period of each DFT frequency. A frequency with period T_d = M_d /
/// gcd(f_d, M_d) on its non-zero axes goes to bucket min(max(min_d v_s(T_d), 1), L) - 1;
/// the zero frequency goes to bucket L. An alternating pattern with period s
/// lands in bucket 0, the constant in bucket L. Buckets sum to |values|^2.
inline std::vector<double> checkerboard_energy(std::span<const double> values, const std::vector<int>& extents,
                                               const std::vector<int>& s, int L) {
  const int D = static_cast<int>(extents.size());
  if (D < 1 || D > kMaxDim || static_cast<int>(s.size()) != D) throw DomainError("checkerboard_energy: bad grid");
  if (L < 1) throw DomainError("checkerboard_energy: L must be at least 1");
  std::size_t total = 1;
  for (int m : extents) {
    if (m < 1) throw DomainError("checkerboard_energy: bad extent");
    total *= static_cast<std::size_t>(m);
  }
  if (values.size() != total) throw DomainError("checkerboard_energy: values do not fill the grid");
  // Separable unitary DFT.
  std::vector<std::complex<double>> data(values.begin(), values.end());
  std::size_t stride = total;
  for (int d = 0; d < D; ++d) {
    const std::size_t m = static_cast<std::size_t>(extents[d]);
    stride /= m;
    std::vector<std::complex<double>> line(m), out(m);
    for (std::size_t base = 0; base < total; ++base) {
      if ((base / stride) % m != 0) continue;
      for (std::size_t k = 0; k < m; ++k) line[k] = data[base + k * stride];
      for (std::size_t f = 0; f < m; ++f) {
        std::complex<double> acc = 0.0;
        for (std::size_t k = 0; k < m; ++k)
          acc += line[k] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((f * k) % m) / m);
        out[f] = acc / std::sqrt(static_cast<double>(m));
      }
      for (std::size_t k = 0; k < m; ++k) data[base + k * stride] = out[k];
    }
  }
  std::vector<double> buckets(L + 1, 0.0);
  std::vector<int> f(D);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rest = idx;
    for (int d = D - 1; d >= 0; --d) {
      f[d] = static_cast<int>(rest % extents[d]);
      rest /= extents[d];
    }
    int bucket = L;
    int vmin = kInfiniteValuation;
    for (int d = 0; d < D; ++d) {
      if (f[d] == 0) continue;
      const int period = extents[d] / std::gcd(f[d], extents[d]);
      Coord c{};
      c[0] = period;
      vmin = std::min(vmin, s_valuation(c, {s[d]}));
    }
    if (vmin != kInfiniteValuation) bucket = std::min(std::max(vmin, 1), L) - 1;
    buckets[bucket] += std::norm(data[idx]);
  }
  return buckets;
}

/// Energy of an eigenvector of a Gram matrix over inputs x grid positions:
/// bucket energies summed over input blocks.
inline std::vector<double> gram_vector_energy(std::span<const double> vec, int inputs, const std::vector<int>& extents,
                                              const std::vector<int>& s, int L) {
  std::size_t P = 1;
  for (int m : extents) P *= static_cast<std::size_t>(m);
  if (vec.size() != P * inputs) throw DomainError("gram_vector_energy: size mismatch");
  std::vector<double> total(L + 1, 0.0);
  for (int i = 0; i < inputs; ++i) {
    const auto b = checkerboard_energy(vec.subspan(i * P, P), extents, s, L);
    for (int k = 0; k <= L; ++k) total[k] += b[k];
  }
  return total;
}

/// Eigendecomposition plus the checkerboard energy of every eigenvector of a
/// Gram matrix over inputs x a regular grid of output positions.
inline SpectrumReport grid_spectrum(const GramMatrix& K, int inputs, const std::vector<int>& extents,
                                    const std::vector<int>& s, int L) {
  SpectrumReport rep = eigendecompose(K);
  for (const auto& v : rep.eigenvectors) rep.checkerboard_energy.push_back(gram_vector_energy(v, inputs, extents, s, L));
  return rep;
}

/// Order against chaos on a small 1-D DC-NN: stride 2, window 2, output
/// positions 0..patch-1, on-sphere inputs drawn per seed.
struct SeparationConfig {
  int depth = 3;
  int patch = 16;
  int inputs = 4;
  int n0 = 3;
  double order_beta = 0.5;   // standardized ReLU
  double chaos_beta = 0.1;   // normalized ReLU
};

struct SeparationSide {
  std::string label;
  double r = 0.0;
  GramMatrix gram;
  SpectrumReport spectrum;
  double high_energy = 0.0;  // top eigenvector energy in buckets L-1 and L
};

struct SeparationResult {
  std::uint64_t seed = 0;
  SeparationSide order, chaos;
  bool separated = false;  // order.high_energy > chaos.high_energy
};

inline DCNNSpec separation_spec(const SeparationConfig& c) {
  DCNNSpec spec;
  spec.dim = 1;
  spec.stride = {2};
  spec.window = {2};
  spec.offset = {0};
  spec.depth = c.depth;
  spec.output_patch = box(1, {0}, {c.patch - 1});
  return spec;
}

inline SeparationResult spectral_separation(std::uint64_t seed, const SeparationConfig& c = {}) {
  const PositionGraph g = build(separation_spec(c));
  std::vector<InputField> inputs;
  for (int i = 0; i < c.inputs; ++i)
    inputs.push_back(make_input_field(g, c.n0, random_sphere_source(seed, static_cast<std::uint32_t>(i), c.n0)));
  auto side = [&](const std::string& label, const Nonlinearity& sigma, double beta) {
    SeparationSide out;
    out.label = label;
    out.r = characteristic_value(sigma, beta);
    out.gram = assemble_graph(g, sigma, beta, inputs);
    out.spectrum = grid_spectrum(out.gram, c.inputs, {c.patch}, {2}, c.depth);
    const auto& top = out.spectrum.checkerboard_energy.front();
    out.high_energy = top[c.depth - 1] + top[c.depth];
    return out;
  };
  SeparationResult res;
  res.seed = seed;
  res.order = side("order", standardize(Nonlinearity::relu()), c.order_beta);
  res.chaos = side("chaos", normalize(Nonlinearity::relu()), c.chaos_beta);
  res.separated = res.order.high_energy > res.chaos.high_energy;
  return res;
}

inline void write_eigenvalues_csv(std::ostream& os, const SpectrumReport& r, const std::string& metadata = {}) {
  CsvWriter csv(os);
  if (!metadata.empty()) csv.comment(metadata);
  csv.header({"k", "eigenvalue"});
  for (std::size_t k = 0; k < r.eigenvalues.size(); ++k) {
    csv.cell(static_cast<int>(k)).cell(r.eigenvalues[k]);
    csv.end_row();
  }
}

inline void write_energy_csv(std::ostream& os, const SpectrumReport& r, const std::string& metadata = {}) {
  CsvWriter csv(os);
  if (!metadata.empty()) csv.comment(metadata);
  if (r.checkerboard_energy.empty()) return;
  std::vector<std::string> names{"k"};
  for (std::size_t b = 0; b < r.checkerboard_energy.front().size(); ++b) names.push_back("bucket_" + std::to_string(b));
  csv.header(names);
  for (std::size_t k = 0; k < r.checkerboard_energy.size(); ++k) {
    csv.cell(static_cast<int>(k));
    for (double e : r.checkerboard_energy[k]) csv.cell(e);
    csv.end_row();
  }
}

inline nlohmann::json spectrum_to_json(const SpectrumReport& r, const GramMatrix& K, std::size_t vectors) {
  nlohmann::json j;
  j["eigenvalues"] = json_reals(r.eigenvalues);
  j["constant_rayleigh"] = json_real(r.constant_rayleigh);
  nlohmann::json idx = nlohmann::json::array();
  for (const auto& [i, p] : K.index) idx.push_back({{"input", i}, {"position", p}});
  j["index"] = idx;
  j["eigenvectors"] = nlohmann::json::array();
  for (std::size_t k = 0; k < std::min(vectors, r.eigenvectors.size()); ++k)
    j["eigenvectors"].push_back(json_reals(r.eigenvectors[k]));
  if (!r.checkerboard_energy.empty()) {
    j["checkerboard_energy"] = nlohmann::json::array();
    for (const auto& b : r.checkerboard_energy) j["checkerboard_energy"].push_back(json_reals(b));
  }
  return j;
}

}  // namespace ntk
