#pragma once

#include <cstdint>

namespace oprobe {

/**
 * 64-bit linear congruential generator.
 *
 * state' = state * 6364136223846793005 + 1442695040888963407  (mod 2^64)
 *
 * Constants are Knuth's MMIX multiplier/increment. Everything that must be
 * reproducible across platforms (benchmark sampling, world shuffles, the
 * sampling decoder) draws from this generator rather than <random>
 * distributions, whose output is implementation-defined.
 */
class Lcg64 {
 public:
  explicit Lcg64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
    return state_;
  }

  /// Uniform double in [0, 1) with 53 bits of precision.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  /// Uniform integer in [0, bound). Modulo selection, bias is acceptable and
  /// documented: bound is tiny compared to 2^64 in every call site.
  std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

 private:
  std::uint64_t state_;
};

}  // namespace oprobe
