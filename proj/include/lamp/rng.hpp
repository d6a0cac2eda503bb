#pragma once

#include <cmath>
#include <cstdint>

namespace lamp {

// Counter-based deterministic generator built on the SplitMix64 finalizer:
// draw k of stream (seed) is mix(seed + (k+1) * 0x9E3779B97F4A7C15). Output
// depends only on (seed, counter), so sequences are identical across
// platforms and independent streams can be derived by reseeding.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), counter_(0) {}

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in the open interval (0,1): 52 mantissa draws centered in the
  // cell so 0 and 1 are unreachable.
  double uniform() {
    return (static_cast<double>(next_u64() >> 12) + 0.5) *
           (1.0 / 4503599627370496.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes exactly two uniforms per call.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Independent stream derived from this generator's seed and a stream id.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t z = (seed_ ^ 0xD1B54A32D192ED03ULL) +
                      (stream + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace lamp
