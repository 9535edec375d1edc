// Deterministic, splittable random streams.
//
// Every stochastic component of the pipeline draws from an RngStream derived
// from (master seed, purpose tag, indices...) so that results are bit-stable
// across runs and independent of thread scheduling. The mixing function is
// a splitmix64 chain over the key words; the stream itself is xoshiro256++.
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>

namespace textdepth {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Key-derivation: fold each word into a splitmix64 chain.
inline uint64_t mix_key(uint64_t seed, std::initializer_list<uint64_t> words) {
  uint64_t s = seed;
  uint64_t acc = splitmix64(s);
  for (uint64_t w : words) {
    s ^= w + 0x9E3779B97F4A7C15ull + (acc << 6) + (acc >> 2);
    acc = splitmix64(s);
  }
  return acc;
}

class RngStream {
 public:
  RngStream() : RngStream(0) {}

  explicit RngStream(uint64_t key) {
    uint64_t s = key;
    for (auto& word : state_) word = splitmix64(s);
  }

  static RngStream derive(uint64_t seed, std::initializer_list<uint64_t> words) {
    return RngStream(mix_key(seed, words));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire multiply-shift; deterministic.
  uint64_t bounded(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // One standard normal draw via Box-Muller (consumes two uniforms).
  double gaussian() {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void fill_gaussian(std::span<T> out) {
    size_t i = 0;
    while (i + 1 < out.size()) {
      double u1 = uniform();
      if (u1 <= 0.0) u1 = 0x1.0p-53;
      const double u2 = uniform();
      const double r = std::sqrt(-2.0 * std::log(u1));
      out[i++] = static_cast<T>(r * std::cos(2.0 * std::numbers::pi * u2));
      out[i++] = static_cast<T>(r * std::sin(2.0 * std::numbers::pi * u2));
    }
    if (i < out.size()) out[i] = static_cast<T>(gaussian());
  }

  // Normal(0, sigma) truncated to +/-2 sigma, by rejection.
  double truncated_gaussian(double sigma) {
    for (;;) {
      const double z = gaussian();
      if (std::abs(z) <= 2.0) return z * sigma;
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4];
};

// Stable 64-bit hash for string ids (FNV-1a).
inline uint64_t hash_string(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Purpose tags for stream derivation. Values are part of the determinism
// contract: changing them changes every derived stream.
namespace rng_tag {
inline constexpr uint64_t kScene = 1;
inline constexpr uint64_t kTrainSample = 2;
inline constexpr uint64_t kInit = 3;
inline constexpr uint64_t kInferSeed = 4;
}  // namespace rng_tag

}  // namespace textdepth
