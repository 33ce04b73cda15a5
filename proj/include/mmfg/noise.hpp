#pragma once

// Counter-based Brownian increments. The increment for a (path, player, step)
// triple is a pure function of the seed and the triple, so compared systems
// can share noise exactly and paths can be simulated in any order.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "mmfg/core_numerics.hpp"

namespace mmfg {

/// Philox4x32-10 (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Standard Gaussian increments scaled by sqrt(h). Player 0 is the major
/// noise W0; players >= 1 are the minor noises W^i.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Writes `dim` independent N(0, 1) draws for (path, player, step).
  void standard_normals(std::uint64_t path, std::uint64_t player, std::uint64_t step, int dim,
                        double* out) const {
    const Philox4x32::Key key = {static_cast<std::uint32_t>(seed_),
                                 static_cast<std::uint32_t>(seed_ >> 32)};
    for (int block = 0; 2 * block < dim; ++block) {
      // The counter packs the triple into 128 bits: 32 bits of path, 32 of
      // player, 48 of step and 16 of block index.
      const Philox4x32::Counter ctr = {
          static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(player),
          static_cast<std::uint32_t>(step),
          static_cast<std::uint32_t>(((step >> 32) & 0xFFFFu) |
                                     (static_cast<std::uint64_t>(block) << 16))};
      const Philox4x32::Counter r = Philox4x32::generate(ctr, key);
      // Two 53-bit uniforms in (0, 1], then Box-Muller.
      const double u1 = to_unit(r[0], r[1]);
      const double u2 = to_unit(r[2], r[3]);
      const double radius = std::sqrt(-2.0 * std::log(u1));
      const double angle = 2.0 * std::numbers::pi * u2;
      out[2 * block] = radius * std::cos(angle);
      if (2 * block + 1 < dim) out[2 * block + 1] = radius * std::sin(angle);
    }
  }

  /// Brownian increment over a step of length h.
  Vector increment(std::uint64_t path, std::uint64_t player, std::uint64_t step, int dim,
                   double h) const {
    Vector v(dim);
    standard_normals(path, player, step, dim, v.data());
    return v * std::sqrt(h);
  }

 private:
  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits =
        ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;  // 53 bits
    return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
  }

  std::uint64_t seed_;
};

}  // namespace mmfg
