#pragma once

#include <cstdint>
#include <random>

namespace fcdd {

// splitmix64; used to derive independent per-sample RNG streams so that
// parallel or reordered sample processing cannot change outputs.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0) {
  return mix64(mix64(base ^ mix64(a)) ^ mix64(b + 0x5851f42d4c957f2dULL));
}

using Rng = std::mt19937_64;

}  // namespace fcdd
