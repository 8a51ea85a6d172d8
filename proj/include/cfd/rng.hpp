#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace cfd {

// Named substreams derived from one run seed. Every source of randomness in a
// run pulls from its own stream so that, e.g., changing the augmentation
// schedule cannot perturb parameter initialization.
enum class Stream : std::uint64_t {
  kInit = 1,
  kData = 2,
  kAugment = 3,
  kBatch = 4,
  kTest = 99,
};

// Deterministic PRNG with counter-based stream splitting. The engine is
// mt19937_64; uniform/normal sampling is done here rather than with
// std::*_distribution so that draws are bit-stable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix(mix(seed) ^ kPhi)) {}

  Rng(std::uint64_t seed, Stream stream, std::uint64_t counter = 0)
      : engine_(mix(mix(mix(seed) ^ static_cast<std::uint64_t>(stream)) ^
                    mix(counter + kPhi))) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection sampled (no modulo bias).
  std::int64_t uniform_int(std::int64_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::int64_t>(v % un);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      const std::int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  static constexpr std::uint64_t kPhi = 0x9e3779b97f4a7c15ULL;

  // splitmix64 finalizer; used only to derive engine seeds.
  static std::uint64_t mix(std::uint64_t z) {
    z += kPhi;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cfd
