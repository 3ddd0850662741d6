#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace cloudmask {

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic, portable random stream. std::mt19937_64 output is fully
// specified by the standard; the distributions here are hand-rolled because
// std::uniform_real_distribution and friends are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(detail::splitmix64(seed)), seed_(seed) {}

  // Independent substream identified by a label. Derivation depends only on
  // (seed, label), never on draw order, so adding streams cannot reshuffle
  // existing ones.
  Rng stream(std::string_view label) const {
    return Rng(seed_ ^ detail::splitmix64(detail::fnv1a64(label)));
  }
  Rng stream(std::string_view label, std::uint64_t index) const {
    return Rng(seed_ ^ detail::splitmix64(detail::fnv1a64(label) + 0x632be59bd9b4e019ULL * (index + 1)));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = gen_();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; draws two uniforms per pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cloudmask
