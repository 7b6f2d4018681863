#ifndef CHAOSLAB_RNG_HPP
#define CHAOSLAB_RNG_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace chaoslab {

// Counter-based generator: every draw is a pure function of (seed, counter
// words), so parallel cells reproduce independently of execution order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t key_mix(std::uint64_t seed, std::uint64_t a,
                             std::uint64_t b = 0, std::uint64_t c = 0,
                             std::uint64_t d = 0) {
  std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  h = splitmix64(h ^ d);
  return h;
}

// Uniform in [0,1) with 53 random bits.
inline double uniform01(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Sequential stream for test data generation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x243f6a8885a308d3ULL)) {}

  std::uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }
  double uniform() { return uniform01(next_u64()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller without caching; two draws per call keeps the stream counter-like.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * n) % n; }

 private:
  std::uint64_t state_;
};

}  // namespace chaoslab

#endif
