#pragma once

// Philox4x32-10 (Salmon et al. counter-based generator) and Gaussian draws
// addressed by (seed, stream, tag, index). Any draw can be recomputed in
// isolation, so parallel and serial runs see identical parameters.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace ntk {

inline constexpr const char* kPrngName = "philox4x32-10+box-muller/v2";

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

inline PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) {
  constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
  constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(m0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(m1) * ctr[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += w0;
    key[1] += w1;
  }
  return ctr;
}

/// Uniform in (0, 1) from the top 52 of 64 random bits; exact in double.
inline double open_unit(std::uint64_t bits) { return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52; }

/// A family of standard normal variates indexed by a 64-bit position.
class GaussianStream {
 public:
  GaussianStream(std::uint64_t seed, std::uint32_t stream, std::uint32_t tag)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, stream_(stream), tag_(tag) {}

  /// Both normals of the Box-Muller pair with counter `pair`.
  std::array<double, 2> pair(std::uint64_t pair) const {
    const PhiloxCounter out = philox4x32_10(
        {static_cast<std::uint32_t>(pair), static_cast<std::uint32_t>(pair >> 32), stream_, tag_}, key_);
    const double u1 = open_unit((static_cast<std::uint64_t>(out[1]) << 32) | out[0]);
    const double u2 = open_unit((static_cast<std::uint64_t>(out[3]) << 32) | out[2]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  double operator()(std::uint64_t index) const { return pair(index / 2)[index % 2]; }

  /// out[i] = (*this)(start + i).
  void fill(std::span<double> out, std::uint64_t start = 0) const {
    std::size_t i = 0;
    if (start % 2 == 1 && !out.empty()) out[i++] = (*this)(start);
    for (; i + 1 < out.size(); i += 2) {
      const auto z = pair((start + i) / 2);
      out[i] = z[0];
      out[i + 1] = z[1];
    }
    if (i < out.size()) out[i] = (*this)(start + i);
  }

 private:
  PhiloxKey key_;
  std::uint32_t stream_, tag_;
};

}  // namespace ntk
