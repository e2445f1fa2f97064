#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "ntk/dcnn.hpp"
#include "ntk/fc_kernel.hpp"
#include "ntk/netgraph.hpp"
#include "oracles.hpp"

using namespace ntk;

namespace {

const Nonlinearity kStdRelu = standardize(Nonlinearity::relu());

// Layer 0: a, b. Layer 1: u <- {a, b}, v <- {b}; a->u shares with b->v.
// Layer 2: w <- {u, v}.
PositionGraph toy_graph() {
  GraphBuilder gb(1, 2);
  gb.add_position(0, {0});
  gb.add_position(0, {1});
  gb.add_position(1, {0});
  gb.add_position(1, {1});
  gb.add_position(2, {0});
  const auto e0 = gb.add_edge(1, 0, 0);
  gb.add_edge(1, 0, 1);
  const auto e2 = gb.add_edge(1, 1, 1);
  gb.share(e0, e2);
  gb.add_edge(2, 0, 0);
  gb.add_edge(2, 0, 1);
  return gb.build();
}

InputField field(std::vector<std::vector<double>> v) {
  InputField f;
  f.n0 = static_cast<int>(v.front().size());
  f.values = std::move(v);
  return f;
}

// Direct recursion with general marginals for the standardized ReLU.
struct ToyOracle {
  const PositionGraph& g;
  double beta;
  InputField x, y;

  double L(double v0, double v1, double c, bool deriv) const {
    const double s = std::sqrt(v0 * v1);
    const double rho = std::clamp(c / s, -1.0, 1.0);
    return deriv ? 2.0 * oracle::step_dual(rho) : 2.0 * s * oracle::relu_dual(rho);
  }
  // S[l][(p, pp)] for pairings xy, xx, yy.
  struct Level {
    std::map<std::pair<int, int>, double> xy, xx, yy, th;
  };
  std::vector<Level> run() const {
    const double b2 = beta * beta;
    std::vector<Level> lv(g.depth() + 1);
    for (int l = 1; l <= g.depth(); ++l)
      for (int p = 0; p < g.size(l); ++p)
        for (int pp = 0; pp < g.size(l); ++pp) {
          const auto& P = g.parents(l, p);
          const auto& Q = g.parents(l, pp);
          const double norm = std::sqrt(static_cast<double>(P.size() * Q.size()));
          double sxy = 0, sxx = 0, syy = 0, t = 0;
          for (const Edge& e : P)
            for (const Edge& f : Q) {
              if (e.cls != f.cls) continue;
              const int q = e.parent, qq = f.parent;
              if (l == 1) {
                auto dot = [&](const InputField& a, const InputField& b) {
                  double s = 0;
                  for (int i = 0; i < a.n0; ++i) s += a.values[q][i] * b.values[qq][i];
                  return s / a.n0;
                };
                sxy += dot(x, y);
                sxx += dot(x, x);
                syy += dot(y, y);
              } else {
                const auto& d = lv[l - 1];
                const double vx = d.xx.at({q, q}), vy = d.yy.at({qq, qq});
                sxy += L(vx, vy, d.xy.at({q, qq}), false);
                sxx += L(vx, d.xx.at({qq, qq}), d.xx.at({q, qq}), false);
                syy += L(d.yy.at({q, q}), vy, d.yy.at({q, qq}), false);
                t += d.th.at({q, qq}) * L(vx, vy, d.xy.at({q, qq}), true);
              }
            }
          auto& cur = lv[l];
          cur.xy[{p, pp}] = b2 + (1 - b2) * sxy / norm;
          cur.xx[{p, pp}] = b2 + (1 - b2) * sxx / norm;
          cur.yy[{p, pp}] = b2 + (1 - b2) * syy / norm;
          cur.th[{p, pp}] = cur.xy[{p, pp}] + (1 - b2) * t / norm;
        }
    return lv;
  }
};

// Random layered graph with translation-keyed sharing (key = q - p).
PositionGraph random_graph(std::mt19937& rng, int depth, int width) {
  GraphBuilder gb(1, depth);
  for (int l = 0; l <= depth; ++l)
    for (int p = 0; p < width; ++p) gb.add_position(l, {p});
  for (int l = 1; l <= depth; ++l)
    for (int p = 0; p < width; ++p) {
      std::vector<int> qs(width);
      std::iota(qs.begin(), qs.end(), 0);
      std::shuffle(qs.begin(), qs.end(), rng);
      const int k = 1 + static_cast<int>(rng() % 3);
      for (int i = 0; i < k; ++i) gb.add_edge(l, p, qs[i], static_cast<long long>(qs[i] - p));
    }
  return gb.build();
}

InputField sphere_field(const PositionGraph& g, int n0, std::uint64_t seed, std::uint32_t id) {
  return make_input_field(g, n0, random_sphere_source(seed, id, n0));
}

}  // namespace

TEST(Graph, FcGraphValid) {
  const auto g = fc_graph(4);
  EXPECT_TRUE(validate(g).empty());
  EXPECT_EQ(g.depth(), 4);
  EXPECT_EQ(ancestors(g, 0, 3, 0), std::set<int>{0});
  EXPECT_EQ(ancestors(g, 0, 3, 2), std::set<int>{0});
}

TEST(Graph, SharedEdgesIntoOnePositionAreReported) {
  GraphBuilder gb(1, 1);
  gb.add_position(0, {0});
  gb.add_position(0, {1});
  gb.add_position(1, {0});
  gb.add_edge(1, 0, 0, 7);
  gb.add_edge(1, 0, 1, 7);
  const auto bad = validate(gb.build());
  ASSERT_FALSE(bad.empty());
  EXPECT_NE(bad.front().find("share"), std::string::npos);
}

TEST(Graph, JsonRoundTrip) {
  const auto g = toy_graph();
  const auto h = graph_from_json(graph_to_json(g));
  EXPECT_EQ(graph_to_json(h), graph_to_json(g));
  EXPECT_EQ(h.class_count(1), 2);
}

TEST(GraphKernel, ToyMatchesDirectRecursion) {
  const auto g = toy_graph();
  const InputField x = field({{1.3, 0.2}, {-0.4, 0.9}});
  const InputField y = field({{0.1, -1.1}, {0.7, 0.5}});
  GraphKernelOptions opt;
  opt.general_marginals = true;
  GraphKernelEvaluator ev(g, kStdRelu, 0.3, x, y, opt);
  const auto lv = ToyOracle{g, 0.3, x, y}.run();
  for (int l = 1; l <= 2; ++l)
    for (int p = 0; p < g.size(l); ++p)
      for (int pp = 0; pp < g.size(l); ++pp) {
        EXPECT_NEAR(ev.sigma(l, p, pp), lv[l].xy.at({p, pp}), 1e-10) << l << p << pp;
        EXPECT_NEAR(ev.theta(l, p, pp), lv[l].th.at({p, pp}), 1e-10) << l << p << pp;
      }
}

TEST(GraphKernel, UnitMarginalsPreconditions) {
  const auto g = toy_graph();
  const InputField off = field({{1.3, 0.2}, {-0.4, 0.9}});
  EXPECT_THROW(GraphKernelEvaluator(g, kStdRelu, 0.3, off, off), PreconditionError);
  const InputField on = sphere_field(g, 2, 1, 0);
  EXPECT_THROW(GraphKernelEvaluator(g, Nonlinearity::relu(), 0.3, on, on), PreconditionError);
  EXPECT_NO_THROW(GraphKernelEvaluator(g, kStdRelu, 0.3, on, on));
}

TEST(GraphKernel, UnitAndGeneralMarginalsAgreeOnSphere) {
  std::mt19937 rng(5);
  const auto g = random_graph(rng, 3, 5);
  const InputField x = sphere_field(g, 3, 2, 0), y = sphere_field(g, 3, 2, 1);
  GraphKernelOptions gen;
  gen.general_marginals = true;
  GraphKernelEvaluator a(g, kStdRelu, 0.2, x, y), b(g, kStdRelu, 0.2, x, y, gen);
  for (auto [p, pp] : all_pairs(g, 3)) EXPECT_NEAR(a.theta(3, p, pp), b.theta(3, p, pp), 1e-12);
}

TEST(GraphKernel, FcReduction) {
  const auto g = fc_graph(5);
  for (double beta : {0.1, 0.5}) {
    const InputField x = sphere_field(g, 6, 3, 0), y = sphere_field(g, 6, 3, 1);
    const double rho = overlap(x.values[0], y.values[0]);
    GraphKernelEvaluator ev(g, kStdRelu, beta, x, y);
    const FCArchitecture arch{kStdRelu, beta, 5, 6};
    EXPECT_NEAR(ev.theta(5, 0, 0), fc_ntk(arch, rho), 1e-12);
    for (int l = 1; l <= 5; ++l) EXPECT_NEAR(ev.sigma(l, 0, 0), activation_kernel(arch, rho, l), 1e-12);
  }
}

// Position-independent diagonals on random graphs.
TEST(GraphKernel, DiagonalInvarianceOnRandomGraphs) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = random_graph(rng, 4, 6);
    ASSERT_TRUE(validate(g).empty());
    const InputField x = sphere_field(g, 3, 100 + trial, 0);
    const double beta = 0.3;
    GraphKernelEvaluator ev(g, kStdRelu, beta, x, x);
    const double r = characteristic_value(kStdRelu, beta);
    for (int p = 0; p < g.size(4); ++p) {
      for (int l = 1; l <= 4; ++l) EXPECT_NEAR(ev.sigma(l, p % g.size(l), p % g.size(l)), 1.0, 1e-10);
      EXPECT_NEAR(ev.theta(4, p, p), diagonal_ntk_closed_form(r, 4), 1e-10);
    }
  }
}

TEST(GraphKernel, SymmetryAndCauchySchwarz) {
  std::mt19937 rng(3);
  const auto g = random_graph(rng, 3, 5);
  const InputField x = sphere_field(g, 2, 9, 0), y = sphere_field(g, 2, 9, 1);
  GraphKernelEvaluator exy(g, kStdRelu, 0.4, x, y), eyx(g, kStdRelu, 0.4, y, x);
  for (int l = 1; l <= 3; ++l)
    for (int p = 0; p < g.size(l); ++p)
      for (int pp = 0; pp < g.size(l); ++pp) {
        EXPECT_NEAR(exy.sigma(l, p, pp), eyx.sigma(l, pp, p), 1e-14);
        EXPECT_NEAR(exy.theta(l, p, pp), eyx.theta(l, pp, p), 1e-14);
        const double s = exy.sigma(l, p, pp);
        EXPECT_LE(s * s, exy.sigma_xx(l, p, p) * exy.sigma_yy(l, pp, pp) + 1e-12);
      }
}

TEST(GraphKernel, LayerWeightsOfOneReproduceTheta) {
  std::mt19937 rng(8);
  const auto g = random_graph(rng, 3, 4);
  const InputField x = sphere_field(g, 2, 1, 0), y = sphere_field(g, 2, 1, 1);
  GraphKernelEvaluator ev(g, kStdRelu, 0.4, x, y);
  const int set = ev.add_weights({{1, 1, 1}, {1, 1, 1}});
  double by_layer = 0.0;
  std::vector<int> ids;
  for (int m = 0; m < 3; ++m)
    for (int kind = 0; kind < 2; ++kind) {
      LayerWeights w{{0, 0, 0}, {0, 0, 0}};
      (kind ? w.bias : w.weight)[m] = 1.0;
      ids.push_back(ev.add_weights(w));
    }
  for (int id : ids) by_layer += ev.theta(3, 0, 1, id);
  EXPECT_NEAR(ev.theta(3, 0, 1, set), ev.theta(3, 0, 1), 1e-14);
  EXPECT_NEAR(by_layer, ev.theta(3, 0, 1), 1e-12);
}

TEST(GraphKernel, StandardParametrizationUsesFixedNorm) {
  // One position with one parent under norm 2 halves the weight term.
  const auto g = fc_graph(1);
  const InputField x = sphere_field(g, 4, 1, 0);
  GraphKernelOptions opt;
  opt.parametrization = Parametrization::standard;
  opt.fixed_norm = 2.0;
  GraphKernelEvaluator ev(g, kStdRelu, 0.5, x, x, opt);
  EXPECT_NEAR(ev.sigma(1, 0, 0), 0.25 + 0.75 / 2.0, 1e-15);
}
