#pragma once

#include <cstdint>
#include <random>

namespace repsim {

using Rng = std::mt19937_64;

// splitmix64 finalizer; decorrelates sub-streams derived from one base seed
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum class Stream : std::uint64_t { placement = 1, failure = 2, network = 3, repair = 4 };

inline Rng make_rng(std::uint64_t seed, Stream s) { return Rng(mix_seed(seed, static_cast<std::uint64_t>(s))); }

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng);
}


}  // namespace repsim
