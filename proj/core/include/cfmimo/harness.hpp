#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cfmimo/lmmse.hpp"
#include "cfmimo/pretrain.hpp"

namespace cfmimo {

enum class ExperimentId { kFig3, kFig4, kAblation, kCustom };

std::string_view to_string(ExperimentId id);
ExperimentId parse_experiment(std::string_view text);

/// Sweep definition shared by the experiment runners. A bit width of 0 stands
/// for unquantized fronthaul.
struct ExperimentSpec {
  ExperimentId id = ExperimentId::kCustom;
  std::vector<int> bits{1, 2, 3, 4, 5, 6, 8, 0};
  std::vector<double> snr_db{0, 6, 12, 18, 24, 30};
  std::vector<int> reuse{0, 1, 2, 3};
  std::vector<std::string> equalizers{"icl", "icl_no_ls", "lmmse", "lmmse_inf"};
  int blocks = 2000;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_full;
  std::filesystem::path checkpoint_no_ls;
  /// Operating point of the fronthaul sweep and resolution of the SNR sweep.
  double operating_snr_db = 24.0;
  int snr_sweep_bits = 8;
  /// Pilot regime of the contaminated fronthaul sweep and of custom runs.
  AssignmentPolicy reuse_policy = policy::MixedReuse{};
  /// Fixed UE count; unset draws K from the deployment range.
  std::optional<int> ue_count;
  LmmseOptions lmmse;
  int threads = 1;

  void validate() const;
};

struct ResultRow {
  std::string experiment;
  std::string equalizer;
  int bits = 0;
  double snr_db = 0.0;
  std::string reuse;
  MseEstimate mse;
  std::uint64_t seed = 0;
  std::uint64_t digest = 0;
};

/// Paired difference a - b over identical blocks.
struct PairedDelta {
  std::string a;
  std::string b;
  int bits = 0;
  double snr_db = 0.0;
  std::string reuse;
  MseEstimate delta;
};

inline constexpr std::string_view kResultSchema = "cfmimo-results-v1";

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<PairedDelta> deltas;

  const ResultRow* find(std::string_view equalizer, int bits, double snr_db,
                        std::string_view reuse) const;
  void write_csv(std::ostream& os) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// The first line is a schema comment; the header is
/// experiment,equalizer,b,snr_db,reuse,mse,ci95,blocks,seed,digest.
ResultTable read_results_csv(const std::filesystem::path& path);

/// Builds the named equalizers, loading checkpoints as needed.
std::vector<std::unique_ptr<Equalizer>> make_equalizers(const ExperimentSpec& spec,
                                                        const SystemConfig& sys);

ResultTable run_fig3(const ExperimentSpec& spec, const SystemConfig& sys);
ResultTable run_fig4(const ExperimentSpec& spec, const SystemConfig& sys);
ResultTable run_ablation(const ExperimentSpec& spec, const SystemConfig& sys);
/// Grid over bits x snr_db with reuse_policy.
ResultTable run_custom(const ExperimentSpec& spec, const SystemConfig& sys);
ResultTable run_experiment(const ExperimentSpec& spec, const SystemConfig& sys);

}  // namespace cfmimo
