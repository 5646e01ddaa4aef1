#pragma once

#include <cstdint>
#include <cmath>

// Splittable deterministic RNG. Streams are keyed by (seed, stream id) so
// per-stock generation is reproducible independently of thread count.

namespace onarch {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++, seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t sm = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (lo, hi); never returns the endpoints exactly for lo < hi.
  double uniform(double lo, double hi) {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return lo + u * (hi - lo);
  }

  // Classical Student-t draw via Bailey's polar method.
  double student_t(double nu) {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double w = u * u + v * v;
      if (w > 0.0 && w < 1.0) {
        const double r2 = nu * (std::pow(w, -2.0 / nu) - 1.0);
        return u * std::sqrt(r2 / w);
      }
    }
  }

  // Unit-variance Student draw, nu > 2.
  double student_unit(double nu) {
    return student_t(nu) * std::sqrt((nu - 2.0) / nu);
  }

  double gaussian() {
    // Marsaglia polar; spare value dropped to keep the state trajectory
    // a pure function of the draw count.
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double w = u * u + v * v;
      if (w > 0.0 && w < 1.0) return u * std::sqrt(-2.0 * std::log(w) / w);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

} // namespace onarch
