#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace autofed {

// SplitMix64 finalizer. Used to derive independent sub-seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Folds a sequence of tags into a seed: h <- splitmix64(h ^ splitmix64(tag)).
// The order of tags matters; the result does not depend on anything else.
constexpr std::uint64_t mix_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(seed);
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t));
  return h;
}

// Phase tags for per-(round, client, phase) seed derivation.
enum class Phase : std::uint64_t {
  kData = 1,
  kInit = 2,
  kLocalTrain = 3,
  kAggLearn = 4,
  kShift = 5,
  kSplit = 6,
};

// Deterministic random source. Every draw is built from raw 64-bit engine
// output so results do not depend on the standard library's distribution
// implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via the Marsaglia polar method.
  double normal();

  // Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 is boosted through
  // Gamma(shape + 1) * U^(1/shape).
  double gamma(double shape);

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace autofed
