#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace latro {

// Deterministic 64-bit generator (splitmix64). Distributions are hand-rolled
// on top of raw draws so that streams are bit-identical across standard
// library implementations; nothing here uses <random> distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    return next_u64() % n;
  }

  // Standard normal via Box-Muller (no spare caching: keeps the stream
  // position a pure function of the number of calls).
  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  std::uint64_t state_;
};

inline std::uint64_t mix_u64(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  h *= 0xFF51AFD7ED558CCDull;
  h ^= h >> 33;
  return h;
}

// Seed for one logical sample stream. Every sampling site derives its
// generator as hash(run_seed, domain, epoch, example_index, sample_index),
// which makes results independent of worker count and scheduling.
inline std::uint64_t seed_hash(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x853C49E6748FEA9Bull;
  for (std::uint64_t p : parts) h = mix_u64(h, p);
  return h;
}

// Domain-separation tags for seed_hash.
namespace seed_domain {
constexpr std::uint64_t kRollout = 1;
constexpr std::uint64_t kEval = 2;
constexpr std::uint64_t kShuffle = 3;
constexpr std::uint64_t kInit = 4;
constexpr std::uint64_t kHarness = 5;
}  // namespace seed_domain

}  // namespace latro
