#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace chaosgrad {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Folds any number of coordinates into a single 64-bit seed.
template <class... Ts>
constexpr std::uint64_t derive_seed(std::uint64_t base, Ts... coords) noexcept {
  std::uint64_t h = mix64(base);
  ((h = mix64(h ^ mix64(static_cast<std::uint64_t>(coords) + 0x632BE59BD9B4E019ULL))), ...);
  return h;
}

/// Counter-based generator: the draw at `counter` for a given (seed, stream)
/// is a pure function of those three values, so results never depend on how
/// work is scheduled. `next_*` just walks the counter.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(derive_seed(seed, stream)) {}

  constexpr std::uint64_t bits_at(std::uint64_t counter) const noexcept {
    return mix64(key_ + counter * 0xD1B54A32D192ED03ULL);
  }

  // Uniform on [0, 1).
  double uniform_at(std::uint64_t counter) const noexcept {
    return static_cast<double>(bits_at(counter) >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller on a counter pair disjoint from the
  // counters next_uniform() walks.
  double normal_at(std::uint64_t index) const noexcept {
    const std::uint64_t c = kNormalOffset + 2 * index;
    const double u1 = 1.0 - uniform_at(c);  // (0, 1]
    const double u2 = uniform_at(c + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double next_uniform() noexcept { return uniform_at(counter_++); }
  double next_normal() noexcept { return normal_at(normal_counter_++); }

 private:
  static constexpr std::uint64_t kNormalOffset = 1ULL << 62;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::uint64_t normal_counter_ = 0;
};

}  // namespace chaosgrad
