#ifndef STEGSENSE_RNG_HPP_
#define STEGSENSE_RNG_HPP_

#include <cstdint>
#include <random>
#include <vector>

namespace stegsense {

// Seeded 64-bit engine with distribution helpers that do not depend on the
// standard library's (implementation-defined) distribution classes, so the
// same seed yields the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derive an independent stream from a seed and a list of salts.
  static Rng stream(std::uint64_t seed, std::uint64_t salt_a, std::uint64_t salt_b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt_a), static_cast<std::uint32_t>(salt_a >> 32),
                      static_cast<std::uint32_t>(salt_b), static_cast<std::uint32_t>(salt_b >> 32)};
    std::uint64_t s = 0;
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    s = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
    return Rng(s);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection sampled so there is no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  bool coin() { return (engine_() >> 63) != 0; }

  // Standard normal via Box-Muller (one value per call, the pair's twin is dropped).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stegsense

#endif  // STEGSENSE_RNG_HPP_
