#pragma once

#include <cstdint>
#include <random>

namespace dtbs {

// Named sub-streams derived from one master seed. Every consumer of
// randomness draws from (master, stream, index), which keeps runs
// reproducible and makes resumed runs bit-identical: no rng state has to
// survive a checkpoint, it is reconstructed from the iteration index.
namespace stream {
inline constexpr uint64_t kModelInit = 1;
inline constexpr uint64_t kSourcePool = 2;
inline constexpr uint64_t kTargetDay = 3;
inline constexpr uint64_t kTargetNight = 4;
inline constexpr uint64_t kBatch = 5;       // rcs anchor + source pick + mask subset
inline constexpr uint64_t kAugment = 6;
inline constexpr uint64_t kEvalScene = 7;
inline constexpr uint64_t kEvalRender = 8;
}  // namespace stream

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream_id, uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ (stream_id * 0x9e3779b97f4a7c15ull)) ^ index);
}

inline std::mt19937 make_rng(uint64_t seed) {
  return std::mt19937(static_cast<uint32_t>(seed ^ (seed >> 32)));
}

}  // namespace dtbs
