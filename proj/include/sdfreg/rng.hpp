#pragma once

// Deterministic seeding utilities. All randomized operations in the library
// take an explicit 64-bit seed; sub-streams are derived with splitmix64 so
// that independent stages (and parallel benchmark trials) never share state.

#include <cstdint>
#include <random>

namespace sdfreg {

inline constexpr std::uint64_t kSplitmixGamma = 0x9E3779B97F4A7C15ull;

/// splitmix64 finalizer. Bijective on 64-bit integers.
inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// k-th output of the splitmix64 stream started at `master`, computed by
/// random access (state_k = master + (k+1)*gamma).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64_mix(master + (index + 1) * kSplitmixGamma);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

}  // namespace sdfreg
