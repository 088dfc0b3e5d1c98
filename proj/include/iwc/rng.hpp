#pragma once

#include <cstdint>
#include <random>

namespace iwc {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed of substream `stream` under `seed`: seed XOR splitmix64(stream), mixed
// once more so neighbouring streams decorrelate. Repetition m of a run uses
// derive_seed(run_seed, m), which lets any single repetition be replayed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

inline Engine make_engine(std::uint64_t seed, std::uint64_t stream) {
  return Engine(derive_seed(seed, stream));
}

// Named substreams so different consumers of one seed never overlap.
namespace streams {
inline constexpr std::uint64_t kSplit = 0x51;
inline constexpr std::uint64_t kFeatures = 0x100;
inline constexpr std::uint64_t kTreatmentNoise = 0x200;
inline constexpr std::uint64_t kOutcomeNoise = 0x300;
inline constexpr std::uint64_t kPropensityResample = 0x400;
inline constexpr std::uint64_t kInteraction = 0x500;
inline constexpr std::uint64_t kLearner = 0x600;
inline constexpr std::uint64_t kDirections = 0x700;
}  // namespace streams

}  // namespace iwc
