#pragma once

#include <cmath>
#include <cstdint>

namespace posebench {

// SplitMix64 generator. Chosen over std::mt19937 + distributions because
// its output is identical on every platform and standard library, which
// the synthetic-scene determinism guarantees rely on.
// Constants: increment 0x9E3779B97F4A7C15, mixers 0xBF58476D1CE4E5B9 and
// 0x94D049BB133111EB (Steele, Lea & Flood, 2014).
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n). n must be > 0. Modulo bias is negligible for the
  // small ranges used here.
  uint64_t uniform_index(uint64_t n) { return next() % n; }

  // Standard normal via Box-Muller (platform-independent, unlike
  // std::normal_distribution).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  // Derives an independent stream, e.g. for per-purpose sub-seeds.
  SplitMix64 fork(uint64_t stream) {
    SplitMix64 seeder(state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
    return SplitMix64(seeder.next());
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace posebench
