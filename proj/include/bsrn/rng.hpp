#pragma once

#include <cstdint>
#include <random>

namespace bsrn {

// All randomness in the library flows through this wrapper so that every draw
// is a documented function of the seed. Distributions are hand-rolled on top
// of mt19937_64 because the standard library's are not specified
// bit-for-bit across implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double u01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    const int k = static_cast<int>(u01() * n);
    return k >= n ? n - 1 : k;
  }

 private:
  std::mt19937_64 eng_;
};

constexpr std::uint64_t kGolden64 = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t splitmix64(std::uint64_t x) {
  std::uint64_t z = x + kGolden64;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seed for the RNG stream that drives one training step. Deriving a fresh
// stream per global step (instead of one long-lived stream) is what lets a
// resumed run replay the exact draws of the uninterrupted run.
inline std::uint64_t seed_for_step(std::uint64_t master_seed, std::uint64_t step) {
  return splitmix64(master_seed + (step + 1) * kGolden64);
}

}  // namespace bsrn
