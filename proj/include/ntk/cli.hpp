#pragma once

// Experiment commands behind the `ntk` executable. A command reads a JSON
// config, fills in defaults, runs, and returns tables that are written as CSV
// files or one JSON document. Every output embeds the effective config, and the
// effective config is written next to the outputs so a run can be repeated.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ntk/dcnn.hpp"
#include "ntk/errors.hpp"
#include "ntk/fc_kernel.hpp"
#include "ntk/finwidth.hpp"
#include "ntk/io.hpp"
#include "ntk/netgraph.hpp"
#include "ntk/nonlin.hpp"
#include "ntk/spectra.hpp"

namespace ntk::cli {

using nlohmann::json;

/// Exit status for a run whose checks did not hold.
inline constexpr int kCheckFailed = 4;

/// Config reader that records every value it hands out, defaults included,
/// and rejects keys nobody asked for.
class Config {
 public:
  explicit Config(json in = json::object(), std::string path = {}) : in_(std::move(in)), path_(std::move(path)) {
    if (in_.is_null()) in_ = json::object();
    if (!in_.is_object()) throw ConfigError(where() + "expected a JSON object");
  }

  template <typename T>
  T get(const std::string& key, T def) {
    used_.insert(key);
    if (!in_.contains(key)) {
      eff_[key] = def;
      return def;
    }
    try {
      T v = in_.at(key).get<T>();
      eff_[key] = v;
      return v;
    } catch (const json::exception&) {
      throw ConfigError(where() + "field '" + key + "' has the wrong type");
    }
  }

  /// Raw sub-document, defaulted.
  json raw(const std::string& key, const json& def) {
    used_.insert(key);
    const json v = in_.contains(key) ? in_.at(key) : def;
    return v;
  }

  Config child(const std::string& key, const json& def = json::object()) {
    return Config(raw(key, def), path_ + key + ".");
  }

  void put(const std::string& key, const json& effective) { eff_[key] = effective; }

  /// Throws on keys that were never read.
  void finish() const {
    for (const auto& [k, v] : in_.items())
      if (!used_.count(k)) throw ConfigError(where() + "unknown field '" + k + "'");
  }

  bool has(const std::string& key) const { return in_.contains(key); }
  const json& effective() const { return eff_; }

 private:
  std::string where() const { return path_.empty() ? "config: " : "config." + path_.substr(0, path_.size() - 1) + ": "; }

  json in_;
  std::string path_;
  json eff_ = json::object();
  std::set<std::string> used_;
};

inline json default_sigma(const std::string& normalization = "standardized") {
  return {{"kind", "relu"}, {"normalization", normalization}};
}

/// {"kind": relu|identity|hermite|tabulated|tanh|erf, "normalization": raw|standardized|normalized,
///  "scale", "shift", "coefficients" (hermite), "x"/"y" (tabulated), "points" (tanh, erf)}.
/// A bare string names the kind with raw normalization.
inline Nonlinearity parse_sigma_doc(Config& parent, const std::string& key, const json& def);

inline Nonlinearity parse_sigma(Config& parent, const std::string& key, const json& def) {
  try {
    return parse_sigma_doc(parent, key, def);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config." + key + ": " + e.what());
  }
}

inline Nonlinearity parse_sigma_doc(Config& parent, const std::string& key, const json& def) {
  json doc = parent.raw(key, def);
  if (doc.is_string()) doc = json{{"kind", doc}};
  Config c(doc, key + ".");
  const std::string kind = c.get<std::string>("kind", "relu");
  Nonlinearity s = Nonlinearity::relu();
  if (kind == "relu") {
  } else if (kind == "identity") {
    s = Nonlinearity::identity();
  } else if (kind == "hermite") {
    s = Nonlinearity::hermite(c.get<std::vector<double>>("coefficients", {0.0, 1.0}));
  } else if (kind == "tabulated") {
    s = Nonlinearity::tabulated(c.get<std::vector<double>>("x", {}), c.get<std::vector<double>>("y", {}));
  } else if (kind == "tanh" || kind == "erf") {
    const int points = c.get<int>("points", 4001);
    if (points < 2) throw ConfigError("config." + key + ": points must be at least 2");
    s = kind == "tanh" ? Nonlinearity::tabulate([](double x) { return std::tanh(x); }, -10.0, 10.0, points)
                       : Nonlinearity::tabulate([](double x) { return std::erf(x); }, -10.0, 10.0, points);
  } else {
    throw ConfigError("config." + key + ": unknown nonlinearity kind '" + kind + "'");
  }
  const double scale = c.get<double>("scale", 1.0), shift = c.get<double>("shift", 0.0);
  if (scale != 1.0 || shift != 0.0) s = s.with_affine(scale, shift);
  const std::string norm = c.get<std::string>("normalization", "raw");
  if (norm == "standardized")
    s = standardize(s);
  else if (norm == "normalized")
    s = normalize(s);
  else if (norm != "raw")
    throw ConfigError("config." + key + ": unknown normalization '" + norm + "'");
  c.finish();
  parent.put(key, c.effective());
  return s;
}

inline double parse_beta(Config& c, const std::string& key, double def) {
  const double b = c.get<double>(key, def);
  if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("config: " + key + " must lie in [0, 1]");
  return b;
}

inline int parse_positive(Config& c, const std::string& key, int def, int max = 1 << 30) {
  const int v = c.get<int>(key, def);
  if (v < 1 || v > max) throw ConfigError("config: " + key + " must lie in [1, " + std::to_string(max) + "]");
  return v;
}

inline Parametrization parse_parametrization(const std::string& s) {
  if (s == "graph_based") return Parametrization::graph_based;
  if (s == "standard") return Parametrization::standard;
  throw ConfigError("config: parametrization must be graph_based or standard");
}

inline NormKind parse_norm(const std::string& s) {
  if (s == "none") return NormKind::none;
  if (s == "ln-post") return NormKind::ln_post;
  if (s == "ln-pre") return NormKind::ln_pre;
  if (s == "bn-post") return NormKind::bn_post;
  throw ConfigError("config: norm must be none, ln-post, ln-pre or bn-post");
}

/// One table cell.
struct Cell {
  std::variant<double, long long, std::string> v;
  Cell(double x) : v(x) {}
  Cell(int x) : v(static_cast<long long>(x)) {}
  Cell(long long x) : v(x) {}
  Cell(std::size_t x) : v(static_cast<long long>(x)) {}
  Cell(bool x) : v(std::string(x ? "true" : "false")) {}
  Cell(std::string x) : v(std::move(x)) {}
  Cell(const char* x) : v(std::string(x)) {}

  json to_json() const {
    if (auto d = std::get_if<double>(&v)) return json_real(*d);
    if (auto i = std::get_if<long long>(&v)) return *i;
    return std::get<std::string>(v);
  }
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw Error("table " + name + ": row width does not match the header");
    rows.push_back(std::move(row));
  }
};

struct CommandResult {
  std::vector<Table> tables;
  json summary = json::object();
  std::vector<std::string> messages;
  bool checks_passed = true;
};

struct RunOptions {
  std::filesystem::path out_dir = ".";
  std::string format = "csv";
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::ostream* log = nullptr;
};

inline std::vector<double> default_betas() {
  std::vector<double> b;
  for (int i = 0; i <= 20; ++i) b.push_back(i / 20.0);
  return b;
}

inline CommandResult cmd_regime(Config& c, const RunOptions&) {
  const Nonlinearity s = parse_sigma(c, "sigma", default_sigma());
  const double beta = parse_beta(c, "beta", 0.1);
  const auto betas = c.get<std::vector<double>>("betas", default_betas());
  for (double b : betas)
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("config: betas must lie in [0, 1]");
  c.finish();
  CommandResult res;
  const RegimeReport rep = classify(s, beta);
  Table t{"regime", {"sigma", "beta", "r", "regime", "fixed_point", "note"}, {}};
  t.add({s.describe(), beta, rep.r, to_string(rep.regime), rep.fixed_point ? Cell(*rep.fixed_point) : Cell(""),
         rep.note});
  Table sens{"sensitivity", {"beta", "r", "regime"}, {}};
  for (double b : betas) {
    const RegimeReport rb = classify(s, b);
    sens.add({b, rb.r, to_string(rb.regime)});
  }
  res.tables = {t, sens};
  res.summary = {{"r", json_real(rep.r)}, {"regime", to_string(rep.regime)}};
  res.messages.push_back(s.describe() + ", beta " + format_real(beta) + ": r = " + format_real(rep.r) + " (" +
                         to_string(rep.regime) + ")");
  return res;
}

inline DualMethod parse_method(const std::string& m) {
  if (m == "automatic") return DualMethod::automatic;
  if (m == "closed_form") return DualMethod::closed_form;
  if (m == "quadrature") return DualMethod::quadrature;
  throw ConfigError("config: method must be automatic, closed_form or quadrature");
}

inline CommandResult cmd_dual(Config& c, const RunOptions&) {
  const Nonlinearity s = parse_sigma(c, "sigma", default_sigma());
  const int points = parse_positive(c, "points", 201, 1 << 20);
  const DualMethod method = parse_method(c.get<std::string>("method", "automatic"));
  QuadratureSpec q;
  q.node_count = parse_positive(c, "nodes", q.node_count, 400);
  c.finish();
  if (points < 2) throw ConfigError("config: points must be at least 2");
  CommandResult res;
  Table t{"dual", {"rho", "dual", "dual_derivative"}, {}};
  for (double rho : default_rho_grid(points)) t.add({rho, dual(s, rho, method, q), dual_derivative(s, rho, method, q)});
  res.tables = {t};
  return res;
}

/// Empirical normalized NTK of a finite FC net with batch norm after the last
/// nonlinearity, on points of the unit circle; rho = cos(angle to the first point).
inline Table bn_circle_profile(const Nonlinearity& s, double beta, int depth, int width, int batch, std::uint64_t seed,
                               const std::string& label) {
  if (depth < 2) throw ConfigError("config: the batch norm curve needs depth >= 2");
  std::vector<std::vector<double>> xs;
  for (int k = 0; k < batch; ++k) {
    const double a = 2.0 * std::numbers::pi * k / batch;
    xs.push_back({std::sqrt(2.0) * std::cos(a), std::sqrt(2.0) * std::sin(a)});
  }
  NetArchitecture arch = fc_net(s, beta, 2, std::vector<int>(depth - 1, width));
  arch.norms[depth - 1] = NormKind::bn_post;
  arch.zero_degenerate_norm = true;
  const EmpiricalKernel K = empirical_ntk(sample(arch, seed), fc_inputs(xs));
  Table t{"", {"label", "rho", "ntk", "ntk_normalized"}, {}};
  for (int k = 0; k < batch; ++k) {
    const double rho = std::cos(2.0 * std::numbers::pi * k / batch);
    t.add({label, rho, K.at(0, k), K.at(0, k) / std::sqrt(K.at(0, 0) * K.at(k, k))});
  }
  return t;
}

inline json default_fc_configs() {
  return json::array({{{"label", "relu_beta0.5"}, {"sigma", default_sigma()}, {"beta", 0.5}},
                      {{"label", "relu_beta0.1"}, {"sigma", default_sigma()}, {"beta", 0.1}},
                      {{"label", "normalized_relu_beta0.1"}, {"sigma", default_sigma("normalized")}, {"beta", 0.1}}});
}

inline CommandResult cmd_fc_profile(Config& c, const RunOptions& opt) {
  const int depth = parse_positive(c, "depth", 6, 10000);
  const int points = parse_positive(c, "points", 201, 1 << 20);
  if (points < 2) throw ConfigError("config: points must be at least 2");
  const json configs = c.raw("configs", default_fc_configs());
  if (!configs.is_array()) throw ConfigError("config: configs must be an array");
  struct Curve {
    std::string label;
    FCArchitecture arch;
  };
  std::vector<Curve> curves;
  json eff_configs = json::array();
  for (const auto& entry : configs) {
    Config e(entry, "configs[].");
    Curve cv;
    cv.label = e.get<std::string>("label", "curve" + std::to_string(curves.size()));
    cv.arch.sigma = parse_sigma(e, "sigma", default_sigma());
    cv.arch.beta = parse_beta(e, "beta", 0.1);
    cv.arch.depth = depth;
    cv.arch.n0 = 2;
    e.finish();
    eff_configs.push_back(e.effective());
    curves.push_back(cv);
  }
  c.put("configs", eff_configs);
  Config bn = c.child("batch_norm");
  const bool bn_on = bn.get<bool>("enabled", true);
  const Nonlinearity bn_sigma = parse_sigma(bn, "sigma", default_sigma());
  const double bn_beta = parse_beta(bn, "beta", 0.1);
  const int bn_width = parse_positive(bn, "width", 1024, 1 << 16);
  const int bn_batch = parse_positive(bn, "batch", 64, 4096);
  const std::uint64_t seed = opt.seed.value_or(bn.get<std::uint64_t>("seed", 1));
  bn.put("seed", seed);
  bn.finish();
  c.put("batch_norm", bn.effective());
  c.finish();

  CommandResult res;
  Table t{"profile", {"label", "rho", "ntk", "ntk_normalized"}, {}};
  const auto grid = default_rho_grid(points);
  for (const auto& cv : curves) {
    const KernelProfile p = compute_profile(cv.arch, grid, opt.jobs);
    for (std::size_t i = 0; i < grid.size(); ++i) t.add({cv.label, grid[i], p.ntk[i], p.ntk_normalized[i]});
    double lo = 1.0;
    for (double v : p.ntk_normalized) lo = std::min(lo, v);
    res.summary[cv.label] = {{"min_normalized", json_real(lo)}, {"diagonal", json_real(p.ntk_diagonal)}};
  }
  if (bn_on) {
    const Table b = bn_circle_profile(bn_sigma, bn_beta, depth, bn_width, bn_batch, seed, "batch_norm_finite");
    for (const auto& row : b.rows) t.rows.push_back(row);
  }
  res.tables = {t};
  return res;
}

inline std::string coord_string(const Coord& c, int dim) {
  std::string s;
  for (int d = 0; d < dim; ++d) s += (d ? ";" : "") + std::to_string(c[d]);
  return s;
}

inline CommandResult cmd_dcnn(Config& c, const RunOptions& opt) {
  const Nonlinearity s = parse_sigma(c, "sigma", default_sigma());
  const double beta = parse_beta(c, "beta", 0.5);
  Config sc = c.child("spec");
  DCNNSpec spec;
  spec.dim = sc.get<int>("dim", 1);
  if (spec.dim < 1 || spec.dim > kMaxDim) throw ConfigError("config.spec: dim must be 1..3");
  spec.stride = sc.get<std::vector<int>>("stride", std::vector<int>(spec.dim, 2));
  spec.window = sc.get<std::vector<int>>("window", std::vector<int>(spec.dim, 2));
  spec.offset = sc.get<std::vector<int>>("offset", std::vector<int>(spec.dim, 0));
  spec.depth = sc.get<int>("depth", 3);
  const auto lo = sc.get<std::vector<long long>>("patch_lo", std::vector<long long>(spec.dim, 0));
  const auto hi = sc.get<std::vector<long long>>("patch_hi", std::vector<long long>(spec.dim, 15));
  sc.finish();
  c.put("spec", sc.effective());
  if (static_cast<int>(lo.size()) != spec.dim || static_cast<int>(hi.size()) != spec.dim)
    throw ConfigError("config.spec: patch bounds need one entry per axis");
  spec.output_patch = box(spec.dim, lo, hi);
  const int n0 = parse_positive(c, "n0", 3, 4096);
  const std::uint64_t seed = opt.seed.value_or(c.get<std::uint64_t>("seed", 1));
  c.put("seed", seed);
  const bool same = c.get<bool>("same_input", true);
  const std::string lr = c.get<std::string>("learning_rate", "none");
  if (lr != "none" && lr != "appendix" && lr != "maintext")
    throw ConfigError("config: learning_rate must be none, appendix or maintext");
  c.finish();
  try {
    validate(spec);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("config.spec: ") + e.what());
  }

  CommandResult res;
  const int L = spec.depth;
  const double S = static_cast<double>(spec.stride_product());
  const double r = characteristic_value(s, beta);
  std::optional<LayerWeights> weights;
  CheckerboardProfile prof;
  if (lr == "none") {
    prof = checkerboard_profile(s, beta, L);
  } else {
    const LrMode mode = lr == "appendix" ? LrMode::appendix : LrMode::maintext;
    weights = ldlr_weights(L, S, mode);
    prof = ldlr_ntk(s, beta, S, L, mode);
  }
  Table cb{"checkerboard", {"v", "c", "ntk", "ntk_normalized"}, {}};
  for (int v = 0; v < L; ++v) cb.add({v, prof.c[v], prof.ntk[v], prof.ntk_normalized[v]});

  const PositionGraph g = build(spec);
  const InputField x = make_input_field(g, n0, random_sphere_source(seed, 0, n0));
  const InputField y = same ? x : make_input_field(g, n0, random_sphere_source(seed, 1, n0));
  GraphKernelEvaluator ev(g, s, beta, x, y);
  const int set = weights ? ev.add_weights(*weights) : 0;
  Table kt{"kernel", {"p", "p_prime", "valuation", "ntk"}, {}};
  const Coord origin = g.layer(L).front();
  const int p0 = 0;
  for (int pp = 0; pp < g.size(L); ++pp) {
    const Coord& q = g.layer(L)[pp];
    const int v = s_valuation(coord_difference(q, origin), spec.stride);
    kt.add({coord_string(origin, spec.dim), coord_string(q, spec.dim),
            v == kInfiniteValuation ? Cell("inf") : Cell(v), ev.theta(L, p0, pp, set)});
  }
  res.tables = {cb, kt};
  res.summary = {{"r", json_real(r)}, {"positions", g.size(L)}};
  if (r < 1.0 - kEdgeTolerance) {
    if (lr == "none") {
      const std::vector<int> depths{L};
      const auto rep = checkerboard_order_check(s, beta, depths);
      res.summary["order_check"] = {{"c1", json_real(rep.c1)}, {"passed", rep.passed}};
      res.checks_passed = rep.passed;
      res.messages.push_back(std::string("checkerboard order sandwich: ") + (rep.passed ? "PASS" : "FAIL"));
    } else {
      const auto rep = ldlr_bound_check(prof, r, S);
      res.summary["ldlr_check"] = {{"x", json_real(rep.x)}, {"upper_holds", rep.upper_holds}};
      res.checks_passed = rep.upper_holds;
      res.messages.push_back(std::string("layer-dependent rate upper bound: ") + (rep.upper_holds ? "PASS" : "FAIL"));
    }
  }
  return res;
}

inline CommandResult cmd_border(Config& c, const RunOptions& opt) {
  const Nonlinearity s = parse_sigma(c, "sigma", default_sigma());
  const double beta = parse_beta(c, "beta", 0.5);
  const int depth = parse_positive(c, "depth", 8, 14);
  const long long extent = c.get<long long>("extent", 0);
  const int n0 = parse_positive(c, "n0", 4, 4096);
  const std::uint64_t seed = opt.seed.value_or(c.get<std::uint64_t>("seed", 1));
  c.put("seed", seed);
  const std::string which = c.get<std::string>("parametrization", "both");
  const double tol = c.get<double>("tolerance", 1e-10);
  c.finish();
  std::vector<Parametrization> params;
  if (which == "both")
    params = {Parametrization::standard, Parametrization::graph_based};
  else
    params = {parse_parametrization(which)};
  if (extent < 0) throw ConfigError("config: extent must be non-negative");

  CommandResult res;
  Table prof{"profile", {"parametrization", "position", "sigma_diag", "ntk_diag"}, {}};
  Table closed{"closed_form", {"parametrization", "layer", "sigma00", "sigma00_closed", "ntk00", "ntk00_closed"}, {}};
  for (Parametrization p : params) {
    const BorderProfile b = border_profile(s, beta, depth, p, extent, n0, seed);
    for (const auto& row : b.rows) prof.add({to_string(p), static_cast<long long>(row.position), row.sigma_diag, row.ntk_diag});
    double worst = 0.0;
    for (int l = 0; l < depth; ++l) {
      const bool has = !b.closed_sigma00.empty();
      closed.add({to_string(p), l + 1, b.sigma00[l], has ? Cell(b.closed_sigma00[l]) : Cell(""), b.ntk00[l],
                  has ? Cell(b.closed_ntk00[l]) : Cell("")});
      if (has)
        worst = std::max({worst, std::abs(b.sigma00[l] - b.closed_sigma00[l]) / std::max(1.0, std::abs(b.closed_sigma00[l])),
                          std::abs(b.ntk00[l] - b.closed_ntk00[l]) / std::max(1.0, std::abs(b.closed_ntk00[l]))});
    }
    double spread = 0.0;
    for (const auto& row : b.rows) spread = std::max(spread, std::abs(row.ntk_diag - b.rows.front().ntk_diag));
    res.summary[to_string(p)] = {{"closed_form_deviation", json_real(worst)}, {"ntk_spread", json_real(spread)},
                                 {"note", b.note}};
    const bool ok = worst <= tol;
    res.checks_passed = res.checks_passed && ok;
    res.messages.push_back(to_string(p) + ": closed form deviation " + format_real(worst) + ", profile spread " +
                           format_real(spread) + (ok ? " PASS" : " FAIL"));
  }
  res.tables = {prof, closed};
  return res;
}

inline void add_spectrum_rows(Table& ev, Table& en, const std::string& tag, std::uint64_t seed,
                              const SpectrumReport& r, int vectors) {
  for (std::size_t k = 0; k < r.eigenvalues.size(); ++k) ev.add({static_cast<long long>(seed), tag, k, r.eigenvalues[k]});
  for (int k = 0; k < std::min<int>(vectors, static_cast<int>(r.checkerboard_energy.size())); ++k) {
    std::vector<Cell> row{static_cast<long long>(seed), tag, k};
    for (double e : r.checkerboard_energy[k]) row.push_back(e);
    en.add(std::move(row));
  }
}

inline CommandResult cmd_spectrum(Config& c, const RunOptions& opt) {
  const std::string mode = c.get<std::string>("mode", "separation");
  CommandResult res;
  if (mode == "separation") {
    SeparationConfig sc;
    sc.depth = parse_positive(c, "depth", sc.depth, 8);
    sc.patch = parse_positive(c, "patch", sc.patch, 256);
    sc.inputs = parse_positive(c, "inputs", sc.inputs, 64);
    sc.n0 = parse_positive(c, "n0", sc.n0, 4096);
    sc.order_beta = parse_beta(c, "order_beta", sc.order_beta);
    sc.chaos_beta = parse_beta(c, "chaos_beta", sc.chaos_beta);
    std::vector<std::uint64_t> seeds = c.get<std::vector<std::uint64_t>>("seeds", {1, 2, 3, 4, 5});
    if (opt.seed) {
      seeds = {*opt.seed};
      c.put("seeds", seeds);
    }
    const int vectors = parse_positive(c, "vectors", 4, 1 << 20);
    c.finish();
    Table ev{"eigenvalues", {"seed", "config", "k", "eigenvalue"}, {}};
    std::vector<std::string> cols{"seed", "config", "k"};
    for (int b = 0; b <= sc.depth; ++b) cols.push_back("bucket_" + std::to_string(b));
    Table en{"energy", cols, {}};
    Table sep{"separation", {"seed", "order_high_energy", "chaos_high_energy", "separated"}, {}};
    for (std::uint64_t seed : seeds) {
      const SeparationResult r = spectral_separation(seed, sc);
      add_spectrum_rows(ev, en, "order", seed, r.order.spectrum, vectors);
      add_spectrum_rows(ev, en, "chaos", seed, r.chaos.spectrum, vectors);
      sep.add({static_cast<long long>(seed), r.order.high_energy, r.chaos.high_energy, r.separated});
      res.checks_passed = res.checks_passed && r.separated;
      res.messages.push_back("seed " + std::to_string(seed) + ": order " + format_real(r.order.high_energy) +
                             " vs chaos " + format_real(r.chaos.high_energy) + (r.separated ? " PASS" : " FAIL"));
    }
    res.tables = {ev, en, sep};
  } else if (mode == "fc") {
    FCArchitecture arch;
    arch.sigma = parse_sigma(c, "sigma", default_sigma());
    arch.beta = parse_beta(c, "beta", 0.5);
    arch.depth = parse_positive(c, "depth", 6, 10000);
    arch.n0 = parse_positive(c, "n0", 8, 4096);
    const int count = parse_positive(c, "inputs", 16, 2048);
    const std::uint64_t seed = opt.seed.value_or(c.get<std::uint64_t>("seed", 1));
    c.put("seed", seed);
    c.finish();
    const GramMatrix K = assemble_fc(arch, random_sphere_inputs(count, arch.n0, seed));
    const SpectrumReport r = eigendecompose(K);
    Table ev{"eigenvalues", {"k", "eigenvalue"}, {}};
    for (std::size_t k = 0; k < r.eigenvalues.size(); ++k) ev.add({k, r.eigenvalues[k]});
    res.tables = {ev};
    res.summary = {{"constant_rayleigh", json_real(r.constant_rayleigh)}, {"sweeps", r.sweeps}};
  } else {
    throw ConfigError("config: mode must be separation or fc");
  }
  return res;
}

inline CommandResult cmd_finwidth(Config& c, const RunOptions& opt) {
  const std::string mode = c.get<std::string>("mode", "mc");
  const Nonlinearity s = parse_sigma(c, "sigma", default_sigma());
  const double beta = parse_beta(c, "beta", 0.1);
  const int depth = parse_positive(c, "depth", 3, 64);
  if (depth < 2) throw ConfigError("config: depth must be at least 2");
  const int n0 = parse_positive(c, "n0", 8, 4096);
  const int count = parse_positive(c, "inputs", 4, 256);
  const std::uint64_t seed = opt.seed.value_or(c.get<std::uint64_t>("seed", 1));
  c.put("seed", seed);
  const auto xs = random_sphere_inputs(count, n0, seed + 0x9E3779B97F4A7C15ull);
  CommandResult res;
  if (mode == "mc") {
    const auto widths = c.get<std::vector<int>>("widths", {256, 1024, 4096});
    const int seeds = parse_positive(c, "seeds", 50, 100000);
    c.finish();
    for (int w : widths)
      if (w < 1) throw ConfigError("config: widths must be positive");
    const McSweepResult r = mc_sweep(s, beta, depth, widths, seeds, seed, xs, opt.jobs);
    Table t{"convergence", {"width", "samples", "mean_error", "sd_error", "median_relative_error"}, {}};
    for (const auto& row : r.rows)
      t.add({row.width, row.samples, row.mean_error, row.sd_error, row.median_relative_error});
    res.tables = {t};
    res.summary = {{"slope", json_real(r.fit.slope)}, {"r_squared", json_real(r.fit.r_squared)}};
    res.messages.push_back("log error against log width: slope " + format_real(r.fit.slope));
  } else if (mode == "ln") {
    const auto widths = c.get<std::vector<int>>("widths", {512, 4096});
    const int seeds = parse_positive(c, "seeds", 5, 100000);
    c.finish();
    const LnReport r = ln_equivalence_check(s, beta, depth, widths, seeds, seed, xs);
    Table t{"ln_equivalence",
            {"width", "ln_post_vs_normalized_limit", "ln_post_vs_normalized_net", "ln_pre_vs_plain_limit",
             "plain_vs_limit"},
            {}};
    for (const auto& row : r.rows)
      t.add({row.width, row.ln_post_vs_normalized_limit, row.ln_post_vs_normalized_net, row.ln_pre_vs_plain_limit,
             row.plain_vs_limit});
    res.tables = {t};
    res.summary = {{"post_shrinks", r.post_shrinks}};
  } else if (mode == "kernel") {
    const auto hidden = c.get<std::vector<int>>("widths", std::vector<int>(depth - 1, 256));
    if (static_cast<int>(hidden.size()) != depth - 1) throw ConfigError("config: widths must list depth - 1 hidden widths");
    const int outputs = parse_positive(c, "outputs", 1, 4096);
    const NormKind norm = parse_norm(c.get<std::string>("norm", "none"));
    c.finish();
    const FiniteNet net = sample(fc_net(s, beta, n0, hidden, outputs, norm), seed);
    const EmpiricalKernel K = empirical_ntk(net, fc_inputs(xs));
    const FCArchitecture limit{s, beta, depth, n0};
    Table t{"kernel", {"input", "channel", "input_prime", "channel_prime", "empirical", "limit"}, {}};
    for (int a = 0; a < K.size; ++a)
      for (int b = a; b < K.size; ++b) {
        const auto& oa = K.outputs[a];
        const auto& ob = K.outputs[b];
        const bool same_channel = oa.channel == ob.channel;
        const double lim = same_channel && norm == NormKind::none ? fc_ntk(limit, overlap(xs[oa.input], xs[ob.input]))
                           : same_channel                         ? std::nan("")
                                                                  : 0.0;
        t.add({oa.input, oa.channel, ob.input, ob.channel, K.at(a, b), lim});
      }
    res.tables = {t};
    res.summary = K.metadata;
  } else {
    throw ConfigError("config: mode must be mc, ln or kernel");
  }
  return res;
}

inline CommandResult cmd_bn_check(Config& c, const RunOptions& opt) {
  const Nonlinearity s = parse_sigma(c, "sigma", default_sigma());
  const double beta = parse_beta(c, "beta", 0.1);
  const int depth = parse_positive(c, "depth", 3, 64);
  if (depth < 2) throw ConfigError("config: depth must be at least 2");
  const int width = parse_positive(c, "width", 64, 1 << 16);
  const int batch = parse_positive(c, "batch", 8, 4096);
  if (batch < 2) throw ConfigError("config: batch must be at least 2");
  const int n0 = parse_positive(c, "n0", 4, 4096);
  const int seeds = parse_positive(c, "seeds", 10, 100000);
  const std::uint64_t seed0 = opt.seed.value_or(c.get<std::uint64_t>("seed", 1));
  c.put("seed", seed0);
  const double tol = c.get<double>("tolerance", 1e-8);
  c.finish();
  CommandResult res;
  Table t{"bn_rayleigh", {"seed", "with_batch_norm", "target_beta_squared", "abs_error", "without_batch_norm", "pass"}, {}};
  const double target = beta * beta;
  for (int k = 0; k < seeds; ++k) {
    const std::uint64_t seed = seed0 + k;
    const auto batch_x = fc_inputs(random_sphere_inputs(batch, n0, seed));
    NetArchitecture arch = fc_net(s, beta, n0, std::vector<int>(depth - 1, width));
    const double plain = batch_constant_rayleigh(sample(arch, seed), batch_x);
    arch.norms[depth - 1] = NormKind::bn_post;
    arch.zero_degenerate_norm = true;
    const double with_bn = bn_rayleigh_check(sample(arch, seed), batch_x);
    const bool pass = std::abs(with_bn - target) <= tol;
    t.add({static_cast<long long>(seed), with_bn, target, std::abs(with_bn - target), plain, pass});
    res.checks_passed = res.checks_passed && pass;
    res.messages.push_back("seed " + std::to_string(seed) + ": (1/N) 1^T K 1 = " + format_real(with_bn) +
                           " vs beta^2 = " + format_real(target) + (pass ? " PASS" : " FAIL"));
  }
  res.tables = {t};
  res.summary = {{"target", json_real(target)}, {"batch_times_target", json_real(batch * target)}};
  return res;
}

using CommandFn = std::function<CommandResult(Config&, const RunOptions&)>;

inline const std::map<std::string, CommandFn>& commands() {
  static const std::map<std::string, CommandFn> table{
      {"regime", cmd_regime},   {"dual", cmd_dual},         {"fc-profile", cmd_fc_profile},
      {"dcnn", cmd_dcnn},       {"border", cmd_border},     {"spectrum", cmd_spectrum},
      {"finwidth", cmd_finwidth}, {"bn-check", cmd_bn_check}};
  return table;
}

inline std::string file_stem(const std::string& command) {
  std::string s = command;
  for (char& ch : s)
    if (ch == '-') ch = '_';
  return s;
}

inline void write_table_csv(std::ostream& os, const Table& t, const std::string& metadata) {
  CsvWriter csv(os);
  csv.comment(metadata);
  csv.header(t.columns);
  for (const auto& row : t.rows) {
    for (const auto& cell : row) {
      if (auto d = std::get_if<double>(&cell.v))
        csv.cell(*d);
      else if (auto i = std::get_if<long long>(&cell.v))
        csv.cell(*i);
      else
        csv.cell(std::get<std::string>(cell.v));
    }
    csv.end_row();
  }
}

inline json table_json(const Table& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json r = json::object();
    for (std::size_t k = 0; k < row.size(); ++k) r[t.columns[k]] = row[k].to_json();
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Parses, runs and writes one command. Returns the process exit status.
inline int run(const std::string& command, const json& config, const RunOptions& opt,
               std::vector<std::filesystem::path>* written = nullptr) {
  const auto it = commands().find(command);
  if (it == commands().end()) throw ConfigError("unknown command '" + command + "'");
  if (opt.format != "csv" && opt.format != "json") throw ConfigError("format must be csv or json");
  if (opt.jobs < 1) throw ConfigError("jobs must be at least 1");
  Config cfg(config);
  const CommandResult res = it->second(cfg, opt);
  const json meta = {{"tool", "ntk"},          {"version", kVersion}, {"command", command},
                     {"prng", kPrngName},      {"config", cfg.effective()}};
  std::filesystem::create_directories(opt.out_dir);
  const std::string stem = file_stem(command);
  auto open = [&](const std::string& name) {
    const auto path = opt.out_dir / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    if (written) written->push_back(path);
    return f;
  };
  {
    auto f = open(stem + ".config.json");
    f << cfg.effective().dump(2) << "\n";
  }
  if (opt.format == "csv") {
    const std::string m = meta.dump();
    for (const auto& t : res.tables) {
      auto f = open(stem + "_" + t.name + ".csv");
      write_table_csv(f, t, m);
    }
    if (!res.summary.empty()) {
      auto f = open(stem + "_summary.json");
      f << json{{"metadata", meta}, {"summary", res.summary}}.dump(2) << "\n";
    }
  } else {
    json doc{{"metadata", meta}, {"summary", res.summary}, {"tables", json::object()}};
    for (const auto& t : res.tables) doc["tables"][t.name] = table_json(t);
    auto f = open(stem + ".json");
    f << doc.dump(2) << "\n";
  }
  if (opt.log)
    for (const auto& m : res.messages) *opt.log << m << "\n";
  return res.checks_passed ? 0 : kCheckFailed;
}

}  // namespace ntk::cli
