#pragma once

#include <cmath>
#include <cstdint>

namespace cbcnn {

// xoshiro256** seeded through splitmix64. The algorithm is part of the
// weights file contract (prng id 1), so it must never change behaviour
// between versions; a new algorithm gets a new id.
class Rng {
 public:
  static constexpr std::uint32_t kAlgorithmId = 1;  // "xoshiro256** / splitmix64"

  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      // splitmix64 step
      x += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      word = z ^ (z >> 31);
    }
  }

  // Derives an independent stream; used to split one model seed into the
  // two count-sketch parameter streams.
  Rng substream(std::uint64_t tag) const {
    return Rng(state_[0] ^ (state_[3] * 0x9E3779B97F4A7C15ULL) ^ tag);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform index in [0, n), n >= 1. Rejection keeps it exactly uniform.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  double next_sign() { return (next_u64() & 1) ? 1.0 : -1.0; }

  // Standard normal via Box-Muller; one value per call, no caching, so the
  // stream position stays easy to reason about.
  double next_gaussian() {
    double u1;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
};

}  // namespace cbcnn
