#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ntk/random.hpp"

using namespace ntk;

// Published Philox4x32-10 known-answer vectors.
TEST(Philox, KnownAnswers) {
  EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}), (PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
            (PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
            (PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(GaussianStream, FillMatchesPointwiseFromAnyStart) {
  const GaussianStream g(42, 3, 7);
  for (std::uint64_t start : {0u, 1u, 5u}) {
    std::vector<double> v(9);
    g.fill(v, start);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i], g(start + i));
  }
}

TEST(GaussianStream, StreamsAndTagsDiffer) {
  EXPECT_NE(GaussianStream(1, 0, 0)(0), GaussianStream(1, 1, 0)(0));
  EXPECT_NE(GaussianStream(1, 0, 0)(0), GaussianStream(1, 0, 1)(0));
  EXPECT_NE(GaussianStream(1, 0, 0)(0), GaussianStream(2, 0, 0)(0));
  EXPECT_EQ(GaussianStream(1, 0, 0)(17), GaussianStream(1, 0, 0)(17));
}

// First and second moments over 1e6 draws within 5 standard errors.
TEST(GaussianStream, Moments) {
  const GaussianStream g(2024, 0, 0);
  const int n = 1000000;
  std::vector<double> v(n);
  g.fill(v);
  double m = 0.0, m2 = 0.0, m4 = 0.0;
  for (double x : v) {
    m += x;
    m2 += x * x;
    m4 += x * x * x * x;
  }
  m /= n;
  m2 /= n;
  m4 /= n;
  EXPECT_LE(std::abs(m), 5.0 / std::sqrt(n));
  EXPECT_LE(std::abs(m2 - 1.0), 5.0 * std::sqrt(2.0 / n));
  EXPECT_LE(std::abs(m4 - 3.0), 5.0 * std::sqrt(96.0 / n));
}

TEST(OpenUnit, StrictlyInside) {
  EXPECT_GT(open_unit(0), 0.0);
  EXPECT_LT(open_unit(~0ull), 1.0);
}
