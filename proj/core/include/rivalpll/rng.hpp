#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rivalpll::rng {

// Counter-based draws: every random quantity is a pure function of
// (seed, stream, indices...), so results never depend on evaluation order,
// batching, or how many draws some other component consumed. Reruns with the
// same seed are bit-identical by construction.
enum class Stream : std::uint64_t {
  kFlipRate = 1,
  kFlipDraw,
  kRival,
  kMixtureClass,
  kMixtureFeature,
  kAugNoise,
  kAugMask,
  kParamInit,
  kPrototypeInit,
  kShuffle,
  kSimplex,
  kGeneric,
};

// splitmix64 finalizer; full-period bijection on 64-bit state.
inline std::uint64_t mix(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Key {
 public:
  Key() = default;
  explicit Key(std::uint64_t seed) : state_(mix(seed)) {}
  Key(std::uint64_t seed, Stream stream)
      : state_(mix(mix(seed) ^ static_cast<std::uint64_t>(stream))) {}

  [[nodiscard]] Key with(std::uint64_t index) const {
    Key k;
    k.state_ = mix(state_ ^ index);
    return k;
  }

  [[nodiscard]] std::uint64_t bits() const noexcept { return state_; }

  // [0, 1)
  [[nodiscard]] double uniform() const noexcept {
    return static_cast<double>(state_ >> 11) * 0x1.0p-53;
  }

  // (0, 1]; safe to feed into log
  [[nodiscard]] double uniform_open() const noexcept {
    return (static_cast<double>(state_ >> 11) + 1.0) * 0x1.0p-53;
  }

  [[nodiscard]] double uniform_in(double lo, double hi) const noexcept {
    return lo + (hi - lo) * uniform();
  }

  // Box-Muller on two sub-draws of this key
  [[nodiscard]] double gaussian() const noexcept {
    const double u1 = with(0).uniform_open();
    const double u2 = with(1).uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_ = 0;
};

}  // namespace rivalpll::rng
