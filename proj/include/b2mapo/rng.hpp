#pragma once

// Deterministic random utilities shared by game builders, rollouts and tests.
// The engine is std::mt19937_64 (bit-exact across standard library vendors);
// every variate transform is implemented here because the std::*_distribution
// classes are implementation-defined and would break byte-identical replay.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace b2mapo {

// splitmix64 finalizer, used to decorrelate derived seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Child stream seed for (master, stream). Streams indexed by caller so that
// episode k of a rollout always sees the same values no matter how many
// other consumers draw from the master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix64(master ^ mix64(stream));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 significant bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller without caching; one variate costs two uniforms but the
  // stream position never depends on call history.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Integer uniform on [0, n) by rejection-free scaling; n is tiny here so
  // modulo bias through the 53-bit mantissa path is far below 2^-40.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    int v = static_cast<int>(uniform01() * static_cast<double>(n));
    return v >= n ? n - 1 : v;
  }

  // Sample an index from an (approximately normalized) probability vector by
  // CDF scan; mass deficits from rounding fall on the last index.
  int categorical(const std::vector<double>& probs) {
    if (probs.empty()) throw std::invalid_argument("Rng::categorical: empty distribution");
    double u = uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace b2mapo
