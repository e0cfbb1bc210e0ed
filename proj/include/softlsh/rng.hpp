#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace softlsh {

/// SplitMix64 finalizer. Used for seed expansion and stream derivation.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives the seed of sub-stream `stream` from `master`.
///
/// derive_seed(m, s) = splitmix64(splitmix64(m) ^ (s * 0xD1B54A32D192ED03 + 0x8CB92BA72F3D8DD7)).
/// Streams are independent of each other, so table l of a HashTableSet does
/// not change when more tables are appended.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

/// xoshiro256** generator with a Box-Muller normal sampler.
///
/// Every algorithm here is fully specified (no std:: distributions), so the
/// same seed reproduces the same stream with any conforming compiler:
///   - state words are four successive splitmix64 outputs seeded from `seed`;
///   - uniform() = (next() >> 11) * 2^-53, in [0, 1);
///   - normal() draws u1 = 1 - uniform(), u2 = uniform() and returns
///     sqrt(-2 ln u1) cos(2 pi u2), caching sqrt(-2 ln u1) sin(2 pi u2) for the
///     following call.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return next(); }
  result_type next() noexcept;
  double uniform() noexcept;
  double normal() noexcept;

 private:
  std::array<std::uint64_t, 4> s_{};
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace softlsh
