#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace credence {

// Seedable 64-bit generator. All randomness in the project flows through
// this type; std::random distributions are avoided because their output is
// implementation-defined and would break bit-reproducibility across
// standard libraries.
//
// Streams are split hierarchically: child("dropout") derives an independent
// stream whose seed depends only on the parent seed and the label, so adding
// a consumer in one component never perturbs another component's draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // splitmix64 warm-up so that small seeds do not start in a low-entropy
    // region of the state space.
    next_u64();
  }

  Rng child(const std::string& label) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the label
    for (unsigned char c : label) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return Rng(mix(state_ ^ h));
  }

  Rng child(std::uint64_t index) const {
    return Rng(mix(state_ ^ (0x9e3779b97f4a7c15ull + index)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1) with 24 bits of mantissa, exact in float.
  float next_float() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Standard normal via Box-Muller (both sqrt and cos are deterministic for
  // a fixed libm, which is all the reproducibility contract requires).
  float next_normal() {
    double u1 = 1.0 - static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    double u2 = static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(6.283185307179586 * u2));
  }

  // Normal(0, std) resampled until within 2 standard deviations.
  float next_truncated_normal(float stddev) {
    float z = next_normal();
    while (z < -2.0f || z > 2.0f) z = next_normal();
    return z * stddev;
  }

  // Fisher-Yates shuffle, deterministic given the stream state.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace credence
