// SPDX-License-Identifier: Apache-2.0
//
// Fixed 64-bit shift-based PRNG (SplitMix64). Every random draw in the
// project goes through this generator so that sequence synthesis, parameter
// initialization and training are bit-for-bit reproducible across runs and
// platforms. No standard-library distributions are used anywhere.

#pragma once

#include <cstdint>

namespace cubic {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Uniform integer in [0, n). Modulo bias is irrelevant for the small n used
  // here (glyph and shape choices); determinism is what matters.
  std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  // Derives an independent stream seed from two words (e.g. run seed and
  // sample counter).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    SplitMix64 g(a ^ (0x9E3779B97F4A7C15ull * (b + 0x632BE59BD9B4E019ull)));
    return g.next();
  }

 private:
  std::uint64_t state_;
};

}  // namespace cubic
