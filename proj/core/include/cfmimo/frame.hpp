#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "cfmimo/channel.hpp"
#include "cfmimo/common.hpp"

namespace cfmimo {

/// T_p orthogonal +-1 sequences; row i is pilot i.
struct PilotBook {
  Eigen::MatrixXi sequences;

  int length() const { return static_cast<int>(sequences.rows()); }
  Eigen::VectorXd pilot(int index) const {
    return sequences.row(index).transpose().cast<double>();
  }
};

/// Sylvester construction; row 0 is all ones. T_p must be a power of two.
PilotBook walsh_hadamard_book(int pilot_length);

namespace policy {
struct Orthogonal {};
struct UniformNoReplacement {};
/// The first reuse + 1 UEs share one pilot; the rest are orthogonal.
struct FixedReuse {
  int reuse = 0;
};
/// Reuse level drawn uniformly from {0, ..., K-1} per block, then FixedReuse.
struct MixedReuse {};
}  // namespace policy

using AssignmentPolicy = std::variant<policy::Orthogonal, policy::UniformNoReplacement,
                                      policy::FixedReuse, policy::MixedReuse>;

std::string to_string(const AssignmentPolicy& p);
AssignmentPolicy parse_policy(const std::string& text);

/// Zero-based pilot index per UE and the resulting collision sets.
struct PilotAssignment {
  std::vector<int> pilot;
  std::vector<std::vector<int>> collisions;

  int num_ues() const { return static_cast<int>(pilot.size()); }
};

PilotAssignment make_assignment(std::vector<int> pilots);

PilotAssignment assign_pilots(int num_ues, int pilot_length, const AssignmentPolicy& policy,
                              std::uint64_t seed);

/// Received pilots and data of one coherence block with a single data use.
/// Noise realizations are retained for test oracles.
struct FrameSignals {
  std::vector<CMat> Z;            // per AP, N x T_p
  std::vector<CVec> y;            // per AP, N
  CVec x;                         // K transmitted symbols
  std::vector<CMat> pilot_noise;  // per AP, N x T_p
  std::vector<CVec> data_noise;   // per AP, N
};

struct PilotPhase {
  std::vector<CMat> Z;
  std::vector<CMat> noise;
};

struct DataPhase {
  std::vector<CVec> y;
  std::vector<CVec> noise;
};

PilotPhase transmit_pilots(const ChannelRealization& channels, const PilotAssignment& assignment,
                           const PilotBook& book, double noise_power, std::uint64_t seed);

DataPhase transmit_data(const ChannelRealization& channels, const CVec& x, double noise_power,
                        std::uint64_t seed);

/// Data phase with a caller-supplied noise realization.
std::vector<CVec> transmit_data(const ChannelRealization& channels, const CVec& x,
                                const std::vector<CVec>& noise);

/// Uniform draw of one symbol per UE from its alphabet.
CVec draw_symbols(const TaskConfig& task, std::uint64_t seed);

}  // namespace cfmimo
