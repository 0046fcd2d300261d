#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace aeail {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from one
// run seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_seed(mix_seed(base) ^ (stream * 0x632be59bd9b4e019ULL));
}

// Box-Muller on the raw engine output so draws do not depend on the
// standard library's distribution implementation.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(rng);
    double u2 = uniform(rng);
    while (u1 <= 0.0) u1 = uniform(rng);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // [0, 1) with 53 random bits.
  static double uniform(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Engine plus its Gaussian sampler, so a consumer owns one stream.
struct RandomStream {
  explicit RandomStream(std::uint64_t seed = 0) : engine(seed) {}
  double gaussian() { return normal(engine); }
  double uniform() { return NormalSampler::uniform(engine); }

  Rng engine;
  NormalSampler normal;
};

inline double uniform_in(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * NormalSampler::uniform(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(NormalSampler::uniform(rng) *
                                  static_cast<double>(n));
}

}  // namespace aeail
