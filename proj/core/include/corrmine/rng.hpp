#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace corrmine {

/// splitmix64 step; used to derive independent seed streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic RNG. Wraps mt19937_64 (fully specified by the standard) and
/// implements its own bounded/real draws so results do not depend on the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double next_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_real();
  }

  /// Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n) {
    // Multiply-shift bounding; the tiny modulo bias (< 2^-64 * n) is
    // irrelevant here and the mapping is platform-independent.
    unsigned __int128 wide = static_cast<unsigned __int128>(next_u64());
    return static_cast<std::size_t>((wide * n) >> 64);
  }

  /// Fisher-Yates shuffle, stable across platforms.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace corrmine
