#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace fedmerge {

// Finalizer from splitmix64; used for seed derivation only.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t tag_hash(std::string_view s) {
  // FNV-1a, then one mixing round so short tags spread well.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

inline std::uint64_t derive_seed(std::uint64_t base) { return mix64(base); }

template <class... Rest>
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                 Rest... rest) {
  return derive_seed(mix64(base ^ mix64(tag + 0x632be59bd9b4e019ULL)),
                     rest...);
}

/// Deterministic RNG with portable draw helpers.
///
/// std::mt19937_64 output is pinned by the standard, but the standard
/// distributions are not; every helper here is implemented by hand so that
/// identical seeds give identical streams on any platform/compiler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1), 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in the open interval (0, 1).
  double uniform_open() {
    double u = uniform();
    while (u == 0.0) u = uniform();
    return u;
  }

  /// Unbiased uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t mask = ~std::uint64_t{0};
    std::uint64_t limit = n - 1;
    // Smallest all-ones mask covering n-1.
    while ((mask >> 1) >= limit) mask >>= 1;
    std::uint64_t r = engine_() & mask;
    while (r >= n) r = engine_() & mask;
    return r;
  }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform_below(n));
  }

  /// Standard normal via Box-Muller (cached pair).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Identity permutation of size n, shuffled.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedmerge
