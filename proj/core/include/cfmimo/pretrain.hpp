#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfmimo/channel.hpp"
#include "cfmimo/frame.hpp"
#include "cfmimo/lmmse.hpp"
#include "cfmimo/prompt.hpp"
#include "cfmimo/quantizer.hpp"
#include "cfmimo/transformer.hpp"

namespace cfmimo {

/// Settings shared by data generation, training and evaluation.
struct SystemConfig {
  DeploymentConfig deployment = DeploymentConfig::full_scale();
  int pilot_length = 8;
  std::vector<ConstellationId> constellations{all_constellations().begin(),
                                              all_constellations().end()};
  /// Noise power that defines the nominal operating SNR.
  double reference_noise_db = -146.0;
  double reference_snr_db = 24.0;

  PromptDims dims() const {
    return {deployment.antennas_per_ap, deployment.num_aps(), pilot_length, deployment.ue_max};
  }
  /// Noise power for a nominal average SNR, moving sigma^2 dB-for-dB.
  double noise_power_for_snr(double snr_db) const;
  double reference_noise_power() const { return noise_power_for_snr(reference_snr_db); }
  void validate() const;
};

/// Task draw for (master, task_index); ue_count overrides the deployment range.
TaskConfig draw_task(const SystemConfig& sys, double noise_power, std::uint64_t master,
                     std::uint64_t task_index, std::optional<int> ue_count = std::nullopt);

/// One simulated coherence block (pilot phase plus one data use).
struct Block {
  TaskConfig task;
  PilotAssignment assignment;
  ChannelRealization channels;
  FrameSignals frame;
  ScalingProfile profile;
  int bits = 0;  // 0 = unquantized fronthaul
  QuantizedFrame qframe;
};

Block simulate_block(const SystemConfig& sys, const PilotBook& book, const TaskConfig& task,
                     const AssignmentPolicy& policy, std::span<const int> bits_choices,
                     std::uint64_t master, std::uint64_t task_index, std::uint64_t block_index);

/// Byte-level digest of the random draws in a block (channels, noise, symbols).
std::uint64_t block_digest(const Block& blk, std::uint64_t seed = 0);

struct Example {
  std::uint32_t task_index = 0;
  std::uint32_t example_index = 0;
  int bits = 0;
  double noise_power = 0.0;
  std::vector<ConstellationId> constellations;
  std::vector<TokenSequence> prompts;  // one per UE
  CVec target;
};

Example make_example(const SystemConfig& sys, const Block& blk, PromptLayout layout,
                     std::uint32_t task_index, std::uint32_t example_index);

struct DatasetSpec {
  SystemConfig system;
  int num_tasks = 8192;
  int examples_per_task = 1024;
  AssignmentPolicy policy = policy::UniformNoReplacement{};
  std::vector<int> bits{8};
  PromptLayout layout = PromptLayout::kFull;
  std::uint64_t master_seed = 1;
  /// Per-task average SNR is drawn uniformly from [low, high] dB; NaN means
  /// the system reference SNR.
  double snr_db_low = std::numeric_limits<double>::quiet_NaN();
  double snr_db_high = std::numeric_limits<double>::quiet_NaN();

  void validate() const;
  /// Noise power of task t.
  double task_noise_power(std::uint64_t task_index) const;
};

Example generate_example(const DatasetSpec& spec, const PilotBook& book, const TaskConfig& task,
                         std::uint32_t task_index, std::uint32_t example_index);

/// Prompt-major storage; prompt p occupies tokens[p * S * d, (p + 1) * S * d).
struct Dataset {
  PromptLayout layout = PromptLayout::kFull;
  int seq_len = 0;
  int token_dim = 0;
  int max_ues = 0;
  std::vector<float> tokens;
  std::vector<float> targets;  // re, im per prompt
  std::vector<std::uint32_t> task_of;
  std::vector<std::uint32_t> example_of;
  std::vector<std::uint8_t> constellation_of;
  std::vector<std::uint8_t> bits_of;
  std::vector<float> noise_power_of;

  std::size_t num_prompts() const { return task_of.size(); }
  std::size_t num_examples() const;
  void append(const Example& ex);
  void append(const Dataset& other);
  std::span<const float> prompt_tokens(std::size_t p) const {
    const std::size_t n = static_cast<std::size_t>(seq_len) * token_dim;
    return {tokens.data() + p * n, n};
  }
};

/// Tasks [task_begin, task_end) of the dataset described by spec.
Dataset generate_dataset(const DatasetSpec& spec, int task_begin, int task_end);
inline Dataset generate_dataset(const DatasetSpec& spec) {
  return generate_dataset(spec, 0, spec.num_tasks);
}

inline constexpr int kDatasetFormatVersion = 1;

/// Writes shard-NNNNN.bin files of at most tasks_per_shard tasks plus index.json.
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                   const Dataset& data, int tasks_per_shard);
Dataset read_dataset(const std::filesystem::path& dir);

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 3e-4;
  int warmup_steps = 1000;
  int total_steps = 20000;
  double clip_norm = 1.0;
  int eval_interval = 500;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double val_fraction = 0.05;
  int max_val_prompts = 4096;
  std::uint64_t seed = 1;
  /// Written with the last finite parameters when the loss diverges.
  std::filesystem::path diagnostic_checkpoint;

  void validate() const;
  double lr_at(int step) const;
};

struct LossPoint {
  int step = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;  // NaN when there is no validation split
};

struct TrainResult {
  ModelParams<float> params;  // best validation (or final when no split)
  std::vector<LossPoint> curve;
  double best_val_mse = 0.0;
  int best_step = 0;
};

using TrainLogger = std::function<void(const LossPoint&)>;

TrainResult train(ModelParams<float> params, const Dataset& data, const TrainConfig& cfg,
                  const TrainLogger& log = {});

/// Mean per-prompt squared error of params over the given prompt indices.
double dataset_mse(const ModelParams<float>& params, const Dataset& data,
                   std::span<const std::size_t> prompts, int batch_size = 256);

void write_loss_csv(std::ostream& os, std::span<const LossPoint> curve);

// ---------------------------------------------------------------------------
// Evaluation

/// Per-block equalizer interface; implementations must be thread-compatible.
class Equalizer {
 public:
  virtual ~Equalizer() = default;
  virtual std::string name() const = 0;
  virtual CVec equalize(const Block& blk) const = 0;
  virtual std::vector<CVec> equalize_batch(std::span<const Block> blocks) const;
};

class LmmseEqualizer : public Equalizer {
 public:
  /// infinite_capacity bypasses quantization for both pilots and data.
  LmmseEqualizer(const PilotBook& book, bool infinite_capacity, LmmseOptions opts = {});
  std::string name() const override { return infinite_ ? "lmmse_inf" : "lmmse"; }
  CVec equalize(const Block& blk) const override;

 private:
  PilotBook book_;
  bool infinite_;
  LmmseOptions opts_;
};

class IclEqualizer : public Equalizer {
 public:
  IclEqualizer(ModelParams<float> params, const PilotBook& book, PromptDims dims,
               std::string name = {});
  std::string name() const override { return name_; }
  CVec equalize(const Block& blk) const override;
  std::vector<CVec> equalize_batch(std::span<const Block> blocks) const override;
  const ModelParams<float>& params() const { return params_; }

 private:
  ModelParams<float> params_;
  PilotBook book_;
  PromptDims dims_;
  std::string name_;
};

/// Outputs x_hat = 0.
class ZeroEqualizer : public Equalizer {
 public:
  std::string name() const override { return "zero"; }
  CVec equalize(const Block& blk) const override { return CVec::Zero(blk.task.num_ues()); }
};

/// Outputs the transmitted symbols.
class GenieEqualizer : public Equalizer {
 public:
  std::string name() const override { return "genie"; }
  CVec equalize(const Block& blk) const override { return blk.frame.x; }
};

struct EvalSpec {
  SystemConfig system;
  double noise_power = 0.0;
  AssignmentPolicy policy = policy::Orthogonal{};
  int bits = 8;
  std::optional<int> ue_count;
  int blocks = 1000;
  std::uint64_t seed = 1;
};

struct MseEstimate {
  double mean = 0.0;
  double ci95 = 0.0;
  int blocks = 0;
};

/// Normal-approximation 95% interval over independent samples.
MseEstimate summarize(std::span<const double> samples);

struct EvalResult {
  std::vector<MseEstimate> mse;                  // per equalizer
  std::vector<std::vector<double>> per_block;    // per equalizer, per block
  std::uint64_t digest = 0;                      // over all drawn blocks
};

/// Paired Monte-Carlo evaluation: every equalizer sees the same blocks. Each
/// block draws a fresh task; the per-block sample is the mean squared error
/// over that block's UEs.
EvalResult evaluate(std::span<const Equalizer* const> equalizers, const EvalSpec& spec);

MseEstimate evaluate_mse(const Equalizer& eq, const EvalSpec& spec);

}  // namespace cfmimo
