#pragma once

#include <cstdint>
#include <random>

namespace cfmimo::rng {

// Purposes for derived substreams. Values are part of the on-disk
// reproducibility contract; append only.
enum class Purpose : std::uint64_t {
  kDeployment = 1,
  kTask = 2,
  kAssignment = 3,
  kChannel = 4,
  kPilotNoise = 5,
  kDataNoise = 6,
  kSymbols = 7,
  kFronthaul = 8,
  kTraining = 9,
  kInit = 10,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the substream named by (task, block, purpose) under `master`.
constexpr std::uint64_t derive(std::uint64_t master, std::uint64_t task,
                               std::uint64_t block, Purpose purpose) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ task);
  h = splitmix64(h ^ (block * 0x632be59bd9b4e019ULL));
  return splitmix64(h ^ static_cast<std::uint64_t>(purpose));
}

using Engine = std::mt19937_64;

inline Engine stream(std::uint64_t master, std::uint64_t task,
                     std::uint64_t block, Purpose purpose) {
  return Engine(derive(master, task, block, purpose));
}

}  // namespace cfmimo::rng
