#ifndef ORTHOMOM_RNG_HPP
#define ORTHOMOM_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace orthomom {

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Per-replication seed: seed_i = mix64(master ^ mix64(i+1)).
// Stable across platforms and thread counts; replication i always sees the
// same stream no matter how work is scheduled.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t i) {
  return mix64(master ^ mix64(i + 1));
}

// mt19937_64 is fully specified by the standard; the distributions below are
// implemented explicitly (std::normal_distribution is not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // uniform on [0,1) with 53 random bits
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Box-Muller; caches the second variate
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }

  // index in [0, n)
  std::uint64_t below(std::uint64_t n) {
    // rejection sampling to avoid modulo bias
    std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = gen_();
    while (x >= lim) x = gen_();
    return x % n;
  }

  // draw index from discrete distribution given cumulative weights (last == 1)
  int categorical(const std::vector<double>& cum) {
    double u = uniform();
    for (size_t k = 0; k < cum.size(); ++k)
      if (u < cum[k]) return static_cast<int>(k);
    return static_cast<int>(cum.size()) - 1;
  }

  std::mt19937_64& raw() { return gen_; }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace orthomom

#endif
