#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ntk/nonlin.hpp"
#include "oracles.hpp"

using namespace ntk;
using std::numbers::pi;

namespace {
const Nonlinearity kStdRelu = standardize(Nonlinearity::relu());
const Nonlinearity kNormRelu = normalize(Nonlinearity::relu());
}  // namespace

TEST(GaussianMoment, HalfGaussian) {
  EXPECT_NEAR(gaussian_moment(Nonlinearity::relu(), 2), 0.5, 1e-14);
  EXPECT_NEAR(gaussian_moment(Nonlinearity::relu(), 1), 1.0 / std::sqrt(2.0 * pi), 1e-14);
  EXPECT_NEAR(gaussian_moment(kStdRelu, 2), 1.0, 1e-14);
  EXPECT_NEAR(gaussian_moment(Nonlinearity::identity(), 1), 0.0, 1e-15);
  EXPECT_NEAR(gaussian_moment(Nonlinearity::relu(), 2, DualMethod::quadrature), 0.5, 1e-10);
}

TEST(Standardize, Examples) {
  EXPECT_NEAR(kStdRelu.scale(), std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(standardize(kStdRelu).scale(), kStdRelu.scale(), 1e-14);
  EXPECT_NEAR(standardize(Nonlinearity::identity().with_affine(3.0, 0.0)).scale(), 1.0, 1e-14);
  EXPECT_THROW(standardize(Nonlinearity::identity().with_affine(0.0, 0.0)), Error);
}

TEST(Normalize, Relu) {
  const double var = 0.5 - 1.0 / (2.0 * pi);
  EXPECT_NEAR(kNormRelu.scale(), 1.0 / std::sqrt(var), 1e-12);
  EXPECT_NEAR(kNormRelu.shift(), -1.0 / std::sqrt(2.0 * pi) / std::sqrt(var), 1e-12);
  const Nonlinearity twice = normalize(kNormRelu);
  EXPECT_NEAR(twice.scale(), kNormRelu.scale(), 1e-12);
  EXPECT_NEAR(twice.shift(), kNormRelu.shift(), 1e-12);
  const Nonlinearity id = normalize(Nonlinearity::identity());
  EXPECT_NEAR(id.scale(), 1.0, 1e-14);
  EXPECT_NEAR(id.shift(), 0.0, 1e-14);
  EXPECT_THROW(normalize(Nonlinearity::identity().with_affine(0.0, 2.0)), Error);
}

TEST(Dual, StandardizedReluValues) {
  EXPECT_NEAR(dual(kStdRelu, 1.0), 1.0, 1e-15);
  EXPECT_NEAR(dual(kStdRelu, 0.0), 1.0 / pi, 1e-15);
  EXPECT_NEAR(dual(kStdRelu, -1.0), 0.0, 1e-15);
  EXPECT_NEAR(dual_derivative(kStdRelu, 0.0), 0.5, 1e-15);
  EXPECT_NEAR(dual_derivative(kStdRelu, 1.0), 1.0, 1e-15);
  EXPECT_NEAR(dual_derivative(kStdRelu, -1.0), 0.0, 1e-15);
  EXPECT_THROW(dual(kStdRelu, 1.5), DomainError);
}

// Closed forms against the conditional-normal Simpson oracle.
TEST(Dual, ReluMatchesOracle) {
  for (double rho : {-0.95, -0.5, -0.1, 0.0, 0.3, 0.7, 0.99}) {
    EXPECT_NEAR(dual(Nonlinearity::relu(), rho), oracle::relu_dual(rho), 1e-11) << rho;
    EXPECT_NEAR(dual_derivative(Nonlinearity::relu(), rho), oracle::step_dual(rho), 1e-11) << rho;
  }
}

TEST(Dual, AffineReluMatchesOracle) {
  const Nonlinearity s = kNormRelu;
  const double a = s.scale(), c = s.shift();
  for (double rho : {-0.8, 0.0, 0.6}) {
    const double expect = a * a * oracle::relu_dual(rho) + 2.0 * a * c / std::sqrt(2.0 * pi) + c * c;
    EXPECT_NEAR(dual(s, rho), expect, 1e-10);
  }
}

TEST(Dual, QuadratureAgreesWithClosedForm) {
  for (int i = 0; i <= 40; ++i) {
    const double rho = -1.0 + i / 20.0;
    EXPECT_NEAR(dual(kNormRelu, rho, DualMethod::quadrature), dual(kNormRelu, rho, DualMethod::closed_form), 1e-9);
    EXPECT_NEAR(dual_derivative(kStdRelu, rho, DualMethod::quadrature),
                dual_derivative(kStdRelu, rho, DualMethod::closed_form), 1e-8);
  }
}

TEST(Dual, HermiteSeriesMatchesTensorOracle) {
  const Nonlinearity h = Nonlinearity::hermite({0.2, 0.7, -0.3, 0.1});
  for (double rho : {-0.9, -0.2, 0.4, 0.95}) {
    const double expect = oracle::smooth_pair(h, h, 1.0, 1.0, rho, 400);
    EXPECT_NEAR(dual(h, rho), expect, 1e-10);
    EXPECT_NEAR(dual(h, rho, DualMethod::quadrature), expect, 1e-10);
    const auto dh = [&](double x) { return h.derivative(x); };
    EXPECT_NEAR(dual_derivative(h, rho), oracle::smooth_pair(dh, dh, 1.0, 1.0, rho, 400), 1e-10);
  }
}

TEST(Dual, TabulatedTanhMatchesOracle) {
  const Nonlinearity t = Nonlinearity::tabulate([](double x) { return std::tanh(x); }, -10.0, 10.0, 20001);
  const auto f = [](double x) { return std::tanh(x); };
  for (double rho : {-0.5, 0.0, 0.8}) EXPECT_NEAR(dual(t, rho), oracle::smooth_pair(f, f, 1.0, 1.0, rho, 400), 1e-6);
}

TEST(PairExpectation, GeneralVariances) {
  const Nonlinearity h = Nonlinearity::hermite({0.1, 0.5, 0.4});
  const double v0 = 1.7, v1 = 0.6, c = 0.4;
  EXPECT_NEAR(pair_expectation(h, v0, v1, c, false), oracle::smooth_pair(h, h, v0, v1, c, 400), 1e-10);
  const double expect = 2.0 * std::sqrt(v0 * v1) * oracle::relu_dual(c / std::sqrt(v0 * v1));
  EXPECT_NEAR(pair_expectation(kStdRelu, v0, v1, c, false), expect, 1e-10);
}

TEST(CharacteristicValue, Examples) {
  EXPECT_NEAR(characteristic_value(kStdRelu, 0.1), 0.99, 1e-14);
  EXPECT_NEAR(characteristic_value(kStdRelu, 0.0), 1.0, 1e-14);
  EXPECT_NEAR(characteristic_value(kNormRelu, 0.0), pi / (pi - 1.0), 1e-12);
  EXPECT_NEAR(characteristic_value(kNormRelu, 0.0, DualMethod::quadrature), pi / (pi - 1.0), 1e-9);
  EXPECT_NEAR(characteristic_value(kStdRelu, 1.0), 0.0, 1e-15);
}

TEST(FixedPoint, Examples) {
  EXPECT_FALSE(fixed_point(kStdRelu, 0.1).has_value());
  EXPECT_FALSE(fixed_point(Nonlinearity::identity(), 0.5).has_value());
  for (double beta : {0.0, 0.1, 0.3}) {
    const auto a = fixed_point(kNormRelu, beta);
    ASSERT_TRUE(a.has_value());
    EXPECT_GE(*a, 0.0);
    EXPECT_LT(*a, 1.0);
    EXPECT_LE(std::abs(bias_map(beta, dual(kNormRelu, *a)) - *a), 1e-12);
  }
}

TEST(Classify, Examples) {
  EXPECT_EQ(classify(kStdRelu, 0.5).regime, Regime::order);
  EXPECT_NEAR(classify(kStdRelu, 0.5).r, 0.75, 1e-14);
  EXPECT_EQ(classify(kStdRelu, 0.0).regime, Regime::edge);
  EXPECT_EQ(classify(kNormRelu, 0.1).regime, Regime::chaos);
  EXPECT_TRUE(classify(kNormRelu, 0.1).fixed_point.has_value());
  const Nonlinearity t = Nonlinearity::tabulate([](double x) { return std::tanh(x); });
  EXPECT_FALSE(classify(t, 0.1).note.empty());
  EXPECT_THROW(check_beta(1.2), DomainError);
}

TEST(Tabulated, RejectsShortGrid) {
  EXPECT_THROW(Nonlinearity::tabulated({-1.0, 0.0, 1.0}, {0.0, 0.0, 1.0}), DomainError);
  EXPECT_THROW(Nonlinearity::tabulated({-9.0, 9.0, 0.0}, {0.0, 0.0, 1.0}), DomainError);
}
