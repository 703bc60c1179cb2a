#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfmimo/common.hpp"

namespace cfmimo {

// Enumerator values are the modulation index carried in the query token.
enum class ConstellationId : int {
  kBpsk = 0,
  kQam4 = 1,
  kPsk8 = 2,
  kQam16 = 3,
  kQam64 = 4,
};

inline constexpr int kNumConstellations = 5;

std::string_view to_string(ConstellationId id);
ConstellationId parse_constellation(std::string_view name);

inline int modulation_index(ConstellationId id) { return static_cast<int>(id); }

/// Gray-labeled alphabet scaled to unit mean energy. points[label] is the
/// symbol carrying bit label `label`.
struct Constellation {
  ConstellationId id;
  std::vector<cdouble> points;

  int size() const { return static_cast<int>(points.size()); }
  double mean_energy() const;
};

Constellation make_constellation(ConstellationId id);

/// All five alphabets, cached; indexed by modulation index.
const Constellation& constellation(ConstellationId id);

std::span<const ConstellationId> all_constellations();

}  // namespace cfmimo
