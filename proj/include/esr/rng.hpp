#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace esr {

/// splitmix64 finalizer; used to derive independent seeds from a parent seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt) {
  return mix64(parent ^ mix64(salt + 0x632be59bd9b4e019ULL));
}

template <typename... Salts>
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt, Salts... rest) {
  return derive_seed(derive_seed(parent, salt), static_cast<std::uint64_t>(rest)...);
}

/// Pseudo-random stream with a portable output sequence.
///
/// std::mt19937_64 has a standardized sequence, but the std distributions do
/// not, so conversions to reals and ranges are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  /// Child stream; does not advance this one.
  Rng fork(std::uint64_t salt) const { return Rng(derive_seed(state_hash(), salt)); }

 private:
  std::uint64_t state_hash() const {
    std::mt19937_64 copy = engine_;
    return copy();
  }

  std::mt19937_64 engine_;
};

}  // namespace esr
