#pragma once

#include <cstdint>
#include <random>

namespace twinsight {

using Rng = std::mt19937_64;

// SplitMix64 finalizer, used to turn structured inputs (seed, round, client id)
// into well-mixed engine seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and up to two tags.
// Same inputs always give the same stream; distinct tags give unrelated ones.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(base) ^ a) ^ b);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(mix64(seed)); }

// Fixed stream tags for the per-round RNG derivation.
namespace stream_tag {
inline constexpr std::uint64_t kSampling = 0x5a4d504cULL;   // client sampling
inline constexpr std::uint64_t kProbe = 0x50524f42ULL;      // gradient-conflict probe
inline constexpr std::uint64_t kData = 0x44415441ULL;       // dataset generation
inline constexpr std::uint64_t kPartition = 0x50415254ULL;  // dirichlet partition
inline constexpr std::uint64_t kScenario = 0x5343454eULL;   // label-deficiency scenario
inline constexpr std::uint64_t kInitSup = 0x494e4953ULL;    // supervised model init
inline constexpr std::uint64_t kInitUnsup = 0x494e4955ULL;  // unsupervised model init
inline constexpr std::uint64_t kRounds = 0x524f554eULL;     // per-round client streams
}  // namespace stream_tag

}  // namespace twinsight
