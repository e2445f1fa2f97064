#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ntk/dcnn.hpp"
#include "ntk/fc_kernel.hpp"
#include "ntk/netgraph.hpp"

using namespace ntk;

namespace {

const Nonlinearity kStdRelu = standardize(Nonlinearity::relu());

Coord c1(long long a) {
  Coord c{};
  c[0] = a;
  return c;
}

Coord c2(long long a, long long b) {
  Coord c{};
  c[0] = a;
  c[1] = b;
  return c;
}

DCNNSpec line_spec(int L, long long outputs, int window = 2, int stride = 2) {
  DCNNSpec spec;
  spec.stride = {stride};
  spec.window = {window};
  spec.offset = {0};
  spec.depth = L;
  for (long long p = 0; p < outputs; ++p) spec.output_patch.push_back(c1(p));
  return spec;
}

DCNNSpec plane_spec(int L, long long side) {
  DCNNSpec spec;
  spec.dim = 2;
  spec.stride = {2, 2};
  spec.window = {2, 1};
  spec.offset = {0, 0};
  spec.depth = L;
  for (long long a = 0; a < side; ++a)
    for (long long b = 0; b < side; ++b) spec.output_patch.push_back(c2(a, b));
  return spec;
}

int valuation_between(const PositionGraph& g, int l, int p, int pp, const std::vector<int>& s) {
  return s_valuation(coord_difference(g.layer(l)[p], g.layer(l)[pp]), s);
}

}  // namespace

TEST(DcnnBuild, BorderlessOutputsHaveFullWindow) {
  const PositionGraph g = build(line_spec(2, 8));
  EXPECT_TRUE(validate(g).empty());
  for (int p = 0; p < g.size(2); ++p) EXPECT_EQ(g.parents(2, p).size(), 2u);
  for (int p = 0; p < g.size(1); ++p) EXPECT_EQ(g.parents(1, p).size(), 2u);
}

TEST(DcnnBuild, ParentRectangle) {
  // P(p) = {floor(p/s) + 1 .. floor(p/s) + w} shifted by the tap convention s q - p in [0, w s).
  const PositionGraph g = build(line_spec(1, 6, 3, 2));
  for (int p = 0; p < g.size(1); ++p) {
    const long long pos = g.layer(1)[p][0];
    std::vector<long long> got;
    for (const Edge& e : g.parents(1, p)) got.push_back(g.layer(0)[e.parent][0]);
    std::sort(got.begin(), got.end());
    ASSERT_EQ(got.size(), 3u);
    for (long long q : got) {
      EXPECT_GE(2 * q - pos, 0);
      EXPECT_LT(2 * q - pos, 6);
    }
  }
}

TEST(DcnnBuild, BoundedBorderHasSingleParent) {
  const PositionGraph g = build(border_spec(3, 16, Parametrization::standard));
  const int p0 = *g.find(3, c1(0));
  ASSERT_EQ(g.parents(3, p0).size(), 1u);
  EXPECT_EQ(g.layer(2)[g.parents(3, p0)[0].parent][0], 0);
  for (long long p = 2; p < 16; ++p) {
    const int i = *g.find(3, c1(p));
    std::vector<long long> got;
    for (const Edge& e : g.parents(3, i)) got.push_back(g.layer(2)[e.parent][0]);
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, (std::vector<long long>{p / 2 - 1, p / 2}));
  }
}

TEST(DcnnBuild, SharingFollowsStride) {
  const PositionGraph g = build(line_spec(1, 12));
  auto class_of = [&](long long q, long long p) {
    const int i = *g.find(1, c1(p));
    for (const Edge& e : g.parents(1, i))
      if (g.layer(0)[e.parent][0] == q) return e.cls;
    ADD_FAILURE() << "edge " << q << " -> " << p << " missing";
    return -1;
  };
  for (long long p = 0; p + 2 < 12; ++p)
    for (const Edge& e : g.parents(1, *g.find(1, c1(p)))) {
      const long long q = g.layer(0)[e.parent][0];
      EXPECT_EQ(class_of(q, p), class_of(q + 1, p + 2));
      // Odd shifts never share.
      if (p + 1 < 12)
        for (const Edge& f : g.parents(1, *g.find(1, c1(p + 1)))) EXPECT_NE(e.cls, f.cls);
    }
}

TEST(DcnnBuild, ExtentsTooSmallRejected) {
  DCNNSpec spec = border_spec(2, 4, Parametrization::standard);
  spec.offset = {4};
  EXPECT_THROW(build(spec), DomainError);
}

TEST(DcnnValuation, Examples) {
  EXPECT_EQ(s_valuation(c1(12), {2}), 2);
  EXPECT_EQ(s_valuation(c2(0, 0), {2, 2}), kInfiniteValuation);
  EXPECT_EQ(s_valuation(c2(6, 4), {2, 2}), 1);
  EXPECT_EQ(s_valuation(c1(-9), {3}), 2);
  EXPECT_EQ(s_valuation(c2(0, 8), {2, 2}), 3);
  EXPECT_THROW(s_valuation(c1(4), {1}), DomainError);
}

TEST(DcnnCheckerboard, ZeroValuationIsBiasVariance) {
  for (double beta : {0.1, 0.5, 0.9}) {
    const auto p = checkerboard_profile(kStdRelu, beta, 5);
    EXPECT_DOUBLE_EQ(p.c[0], beta * beta);
    EXPECT_DOUBLE_EQ(p.ntk[0], beta * beta);
  }
}

TEST(DcnnCheckerboard, IdentityGeometricClosedForm) {
  const double beta = 0.4, b2 = beta * beta;
  const auto p = checkerboard_profile(Nonlinearity::identity(), beta, 8);
  for (int v = 0; v < 8; ++v) EXPECT_NEAR(p.c[v], 1.0 - std::pow(1.0 - b2, v + 1), 1e-14) << v;
}

TEST(DcnnCheckerboard, DiagonalMatchesFcClosedForm) {
  for (double beta : {0.1, 0.6}) {
    const auto p = checkerboard_profile(kStdRelu, beta, 6);
    const double r = 1.0 - beta * beta;
    EXPECT_NEAR(p.ntk_diagonal, (1.0 - std::pow(r, 6)) / (1.0 - r), 1e-12);
    EXPECT_NEAR(p.ntk_normalized.back(), p.ntk.back() / p.ntk_diagonal, 1e-15);
  }
}

TEST(DcnnCheckerboard, MatchesGraphRecursion1d) {
  for (double beta : {0.2, 0.7}) {
    for (int L = 1; L <= 4; ++L) {
      const PositionGraph g = build(line_spec(L, 16));
      const InputField x = make_input_field(g, 3, random_sphere_source(5, 0, 3));
      const InputField y = make_input_field(g, 3, random_sphere_source(5, 1, 3));
      GraphKernelEvaluator ev(g, kStdRelu, beta, x, y);
      const auto prof = checkerboard_profile(kStdRelu, beta, L);
      int checked = 0;
      for (int p = 0; p < g.size(L); ++p)
        for (int pp = 0; pp < g.size(L); ++pp) {
          const int v = valuation_between(g, L, p, pp, {2});
          if (v >= L) continue;
          EXPECT_NEAR(ev.sigma(L, p, pp), prof.c[v], 1e-10) << L << " " << p << " " << pp;
          EXPECT_NEAR(ev.theta(L, p, pp), prof.ntk[v], 1e-10) << L << " " << p << " " << pp;
          ++checked;
        }
      EXPECT_GT(checked, 0);
      GraphKernelEvaluator diag(g, kStdRelu, beta, x, x);
      EXPECT_NEAR(diag.theta(L, 3, 3), prof.ntk_diagonal, 1e-10);
    }
  }
}

TEST(DcnnCheckerboard, MatchesGraphRecursion2d) {
  const double beta = 0.3;
  const int L = 3;
  const PositionGraph g = build(plane_spec(L, 5));
  const InputField x = make_input_field(g, 2, random_sphere_source(9, 0, 2));
  const InputField y = make_input_field(g, 2, random_sphere_source(9, 1, 2));
  GraphKernelEvaluator ev(g, kStdRelu, beta, x, y);
  const auto prof = checkerboard_profile(kStdRelu, beta, L);
  for (int p = 0; p < g.size(L); ++p)
    for (int pp = 0; pp < g.size(L); ++pp) {
      const int v = valuation_between(g, L, p, pp, {2, 2});
      if (v >= L) continue;
      EXPECT_NEAR(ev.sigma(L, p, pp), prof.c[v], 1e-10);
      EXPECT_NEAR(ev.theta(L, p, pp), prof.ntk[v], 1e-10);
    }
}

TEST(DcnnCheckerboard, OrderSandwichRelu) {
  const std::vector<int> depths{6};
  const auto rep = checkerboard_order_check(kStdRelu, 0.1, depths);
  EXPECT_TRUE(rep.passed);
  EXPECT_TRUE(rep.fitted);
  EXPECT_GE(rep.c1, 0.0);
  EXPECT_EQ(rep.rows.size(), 6u);
}

TEST(DcnnCheckerboard, OrderSandwichTabulatedUpToDepthEight) {
  const Nonlinearity tanh_table =
      standardize(Nonlinearity::tabulate([](double t) { return std::tanh(t); }, -10.0, 10.0, 1001));
  const double beta = 0.8;
  ASSERT_LT(characteristic_value(tanh_table, beta), 1.0);
  const std::vector<int> depths{3, 8};
  const auto rep = checkerboard_order_check(tanh_table, beta, depths, std::nullopt, 1e-9);
  EXPECT_TRUE(rep.upper_holds);
  EXPECT_TRUE(rep.lower_holds);
  EXPECT_TRUE(rep.monotone);
}

TEST(DcnnCheckerboard, OrderCheckRejectsChaos) {
  const std::vector<int> depths{4};
  EXPECT_THROW(checkerboard_order_check(normalize(Nonlinearity::relu()), 0.1, depths), PreconditionError);
}

TEST(DcnnChaos, OffDiagonalDecays) {
  const std::vector<int> depths{2, 3, 4, 5, 6};
  DCNNSpec spec = line_spec(2, 1);
  const std::vector<std::pair<Coord, Coord>> pairs{{c1(0), c1(1)}, {c1(0), c1(2)}};
  const auto rep = dcnn_chaos_check(normalize(Nonlinearity::relu()), 0.0, spec, random_sphere_source(3, 0, 3),
                                    random_sphere_source(3, 1, 3), 3, pairs, depths);
  EXPECT_GT(rep.r, 1.0);
  EXPECT_TRUE(rep.passed);
  for (const auto& pr : rep.pairs) EXPECT_LT(pr.rate, 1.0);
}

TEST(DcnnChaos, DiagonalWithSameInputExcluded) {
  const std::vector<int> depths{2, 3};
  const std::vector<std::pair<Coord, Coord>> pairs{{c1(0), c1(0)}};
  const auto rep = dcnn_chaos_check(normalize(Nonlinearity::relu()), 0.0, line_spec(2, 1),
                                    random_sphere_source(3, 0, 3), random_sphere_source(3, 0, 3), 3, pairs, depths,
                                    true);
  ASSERT_EQ(rep.pairs.size(), 1u);
  EXPECT_TRUE(rep.pairs[0].excluded);
}

TEST(DcnnChaos, RejectsOrderRegime) {
  const std::vector<int> depths{2, 3};
  const std::vector<std::pair<Coord, Coord>> pairs{{c1(0), c1(1)}};
  EXPECT_THROW(dcnn_chaos_check(kStdRelu, 0.5, line_spec(2, 1), random_sphere_source(3, 0, 3),
                                random_sphere_source(3, 1, 3), 3, pairs, depths),
               PreconditionError);
}

TEST(DcnnLayerwise, SupportLawAndDecomposition1d) {
  const int L = 4;
  const double beta = 0.35;
  const PositionGraph g = build(line_spec(L, 20));
  const InputField x = make_input_field(g, 3, random_sphere_source(11, 0, 3));
  const InputField y = make_input_field(g, 3, random_sphere_source(11, 1, 3));
  const KernelField full = ntk_field(g, kStdRelu, beta, x, y);
  std::map<std::pair<int, int>, double> sum;
  for (int m = 0; m < L; ++m) {
    const KernelField w = layerwise_ntk(g, kStdRelu, beta, x, y, m, ContributionKind::weight);
    const KernelField b = layerwise_ntk(g, kStdRelu, beta, x, y, m, ContributionKind::bias);
    const long long wper = 1ll << (L - m), bper = 1ll << (L - m - 1);
    for (const auto& [k, v] : w.entries) {
      const long long d = g.layer(L)[k.second][0] - g.layer(L)[k.first][0];
      if (d % wper != 0) EXPECT_EQ(v, 0.0) << m << " " << d;
      else EXPECT_GT(v, 0.0) << m << " " << d;
      sum[k] += v;
    }
    for (const auto& [k, v] : b.entries) {
      const long long d = g.layer(L)[k.second][0] - g.layer(L)[k.first][0];
      if (d % bper != 0) EXPECT_EQ(v, 0.0) << m << " " << d;
      else EXPECT_GT(v, 0.0) << m << " " << d;
      sum[k] += v;
    }
  }
  for (const auto& [k, v] : full.entries) EXPECT_NEAR(sum[k], v, 1e-10 * std::max(1.0, std::abs(v)));
}

TEST(DcnnLayerwise, SupportLaw2d) {
  const int L = 3;
  const double beta = 0.5;
  const PositionGraph g = build(plane_spec(L, 4));
  const InputField x = make_input_field(g, 2, random_sphere_source(2, 0, 2));
  for (int m = 0; m < L; ++m) {
    const KernelField w = layerwise_ntk(g, kStdRelu, beta, x, x, m, ContributionKind::weight);
    for (const auto& [k, v] : w.entries) {
      const int val = valuation_between(g, L, k.first, k.second, {2, 2});
      if (val < L - m) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(DcnnLayerwise, LastLayerBiasIsBetaSquared) {
  const PositionGraph g = build(line_spec(3, 6));
  const InputField x = make_input_field(g, 3, random_sphere_source(1, 0, 3));
  const KernelField b = layerwise_ntk(g, kStdRelu, 0.6, x, x, 2, ContributionKind::bias);
  for (const auto& [k, v] : b.entries) EXPECT_DOUBLE_EQ(v, 0.36);
}

TEST(DcnnLayerwise, RejectsOutOfRangeLayer) {
  const PositionGraph g = build(line_spec(2, 4));
  const InputField x = make_input_field(g, 3, random_sphere_source(1, 0, 3));
  EXPECT_THROW(layerwise_ntk(g, kStdRelu, 0.3, x, x, 2, ContributionKind::weight), DomainError);
  EXPECT_THROW(layerwise_ntk(g, kStdRelu, 0.3, x, x, -1, ContributionKind::bias), DomainError);
}

TEST(DcnnLdlr, AppendixDiagonalClosedForm) {
  const double x = std::sqrt(2.0) * 0.99;
  const double expected = 0.25 * (1.0 - std::pow(x, 4)) / (1.0 - x);
  EXPECT_NEAR(ldlr_diagonal_closed_form(0.99, 2.0, 4), expected, 1e-14);
  const auto p = ldlr_ntk(kStdRelu, 0.1, 2.0, 4, LrMode::appendix);
  EXPECT_NEAR(p.ntk_diagonal, expected, 1e-12);
}

TEST(DcnnLdlr, WeightedGraphDiagonalMatches) {
  const int L = 3;
  const PositionGraph g = build(line_spec(L, 4));
  const InputField x = make_input_field(g, 3, random_sphere_source(4, 0, 3));
  for (LrMode mode : {LrMode::appendix, LrMode::maintext}) {
    GraphKernelEvaluator ev(g, kStdRelu, 0.1, x, x);
    const int set = ev.add_weights(ldlr_weights(L, 2.0, mode));
    const auto p = ldlr_ntk(kStdRelu, 0.1, 2.0, L, mode);
    EXPECT_NEAR(ev.theta(L, 1, 1, set), p.ntk_diagonal, 1e-12) << to_string(mode);
    for (int pp = 0; pp < g.size(L); ++pp) {
      const int v = valuation_between(g, L, 1, pp, {2});
      if (v < L) EXPECT_NEAR(ev.theta(L, 1, pp, set), p.ntk[v], 1e-12) << to_string(mode);
    }
  }
}

TEST(DcnnLdlr, StrideOneReducesToUnweighted) {
  for (LrMode mode : {LrMode::appendix, LrMode::maintext}) {
    const auto w = ldlr_ntk(kStdRelu, 0.3, 1.0, 5, mode);
    const auto u = checkerboard_profile(kStdRelu, 0.3, 5);
    EXPECT_NEAR(w.ntk_diagonal, u.ntk_diagonal, 1e-14);
    for (int v = 0; v < 5; ++v) EXPECT_NEAR(w.ntk[v], u.ntk[v], 1e-14);
  }
}

TEST(DcnnLdlr, VanishesWhenScaledRateBelowOne) {
  const double beta = 0.75, r = 1.0 - beta * beta;
  ASSERT_LT(std::sqrt(2.0) * r, 1.0);
  double prev = INFINITY;
  for (int L = 2; L <= 20; ++L) {
    const double d = ldlr_ntk(kStdRelu, beta, 2.0, L, LrMode::appendix).ntk_diagonal;
    EXPECT_NEAR(d, ldlr_diagonal_closed_form(r, 2.0, L), 1e-12);
    EXPECT_LT(d, prev);
    prev = d;
  }
  EXPECT_LT(prev, 1e-2);
}

TEST(DcnnLdlr, DegenerateBranch) {
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(ldlr_diagonal_closed_form(r, 2.0, 6), 6.0 / 8.0, 1e-12);
}

TEST(DcnnLdlr, BoundsHold) {
  const auto p = ldlr_ntk(kStdRelu, 0.2, 4.0, 6, LrMode::appendix);
  const auto rep = ldlr_bound_check(p, 0.96, 4.0);
  EXPECT_TRUE(rep.upper_holds);
  for (const auto& row : rep.rows) EXPECT_GE(row.theta, row.lower - 1e-12);
}

TEST(DcnnBorder, StandardClosedFormExample) {
  EXPECT_DOUBLE_EQ(border_sigma00_closed_form(0.5, 3), 0.431640625);
  const auto b = border_profile(kStdRelu, 0.5, 3, Parametrization::standard);
  EXPECT_NEAR(b.sigma00[2], 0.431640625, 1e-12);
}

TEST(DcnnBorder, StandardRecursionMatchesClosedFormsToDepth12) {
  for (double beta : {0.2, 0.5}) {
    const auto b = border_profile(kStdRelu, beta, 12, Parametrization::standard);
    ASSERT_EQ(b.closed_sigma00.size(), 12u);
    for (int l = 0; l < 12; ++l) {
      EXPECT_NEAR(b.sigma00[l], b.closed_sigma00[l], 1e-12) << l;
      EXPECT_NEAR(b.ntk00[l], b.closed_ntk00[l], 1e-12) << l;
    }
  }
}

TEST(DcnnBorder, StandardBulkApproachesUnit) {
  const double beta = 0.5, r = 0.75;
  const int L = 5;
  const auto b = border_profile(kStdRelu, beta, L, Parametrization::standard);
  EXPECT_LT(b.rows.front().sigma_diag, 0.9);
  EXPECT_NEAR(b.rows.back().sigma_diag, 1.0, 1e-12);
  EXPECT_NEAR(b.rows.back().ntk_diag, (1.0 - std::pow(r, L)) / (1.0 - r), 1e-12);
}

TEST(DcnnBorder, GraphBasedIsFlat) {
  const double beta = 0.3, r = 1.0 - beta * beta;
  const int L = 6;
  const auto b = border_profile(kStdRelu, beta, L, Parametrization::graph_based);
  for (const auto& row : b.rows) {
    EXPECT_NEAR(row.sigma_diag, 1.0, 1e-12);
    EXPECT_NEAR(row.ntk_diag, (1.0 - std::pow(r, L)) / (1.0 - r), 1e-12);
  }
}

TEST(DcnnBorder, NonReluReportsRecursionOnly) {
  const auto b = border_profile(Nonlinearity::identity(), 0.5, 3, Parametrization::standard);
  EXPECT_TRUE(b.closed_sigma00.empty());
  EXPECT_FALSE(b.note.empty());
}

TEST(DcnnTranslation, ShiftedInputsShiftKernels) {
  const int L = 2;
  const long long k = 3, shift = k * 4;
  const double beta = 0.4;
  const PositionGraph g = build(line_spec(L, 6));
  DCNNSpec moved = line_spec(L, 0);
  for (long long p = 0; p < 6; ++p) moved.output_patch.push_back(c1(p + shift));
  const PositionGraph h = build(moved);
  const InputSource x = random_sphere_source(21, 0, 3), y = random_sphere_source(21, 1, 3);
  auto shifted = [k](InputSource s) { return [s, k](const Coord& c) { return s(c1(c[0] - k)); }; };
  GraphKernelEvaluator a(g, kStdRelu, beta, make_input_field(g, 3, x), make_input_field(g, 3, y));
  GraphKernelEvaluator b(h, kStdRelu, beta, make_input_field(h, 3, shifted(x)), make_input_field(h, 3, shifted(y)));
  for (long long p = 0; p < 6; ++p)
    for (long long pp = 0; pp < 6; ++pp) {
      const int i = *g.find(L, c1(p)), j = *g.find(L, c1(pp));
      const int hi = *h.find(L, c1(p + shift)), hj = *h.find(L, c1(pp + shift));
      EXPECT_NEAR(a.sigma(L, i, j), b.sigma(L, hi, hj), 1e-14);
      EXPECT_NEAR(a.theta(L, i, j), b.theta(L, hi, hj), 1e-14);
    }
}

TEST(DcnnIo, CheckerboardCsvColumns) {
  std::ostringstream os;
  write_checkerboard_csv(os, checkerboard_profile(kStdRelu, 0.5, 3));
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find("\r\n")), "v,c_v,ntk,ntk_normalized");
}
