#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfmimo/common.hpp"
#include "cfmimo/prompt.hpp"

namespace cfmimo {

/// Decoder-only transformer hyper-parameters. Blocks are pre-norm:
/// h += Attn(LN(h)); h += W2 gelu(W1 LN(h)); readout from LN(h) at the last
/// position only.
struct ModelConfig {
  int num_layers = 4;
  int embed_dim = 64;
  int num_heads = 4;
  int max_seq_len = 24;
  int token_dim = 17;
  int ff_mult = 4;
  PromptLayout layout = PromptLayout::kFull;

  void validate() const;
  int head_dim() const { return embed_dim / num_heads; }
  int ff_dim() const { return ff_mult * embed_dim; }
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Tensor names, shapes and offsets in the order they are stored.
std::vector<TensorInfo> parameter_layout(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat parameter vector with named tensor views. Also used for gradients.
/// The storage is over-aligned so that vectorized kernels split every tensor
/// the same way on every run, keeping float results bit-reproducible.
template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<TensorInfo> tensors;
  std::vector<T, Eigen::aligned_allocator<T>> data;

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg);

  std::size_t size() const { return data.size(); }
  const TensorInfo& tensor(std::string_view name) const;

  Eigen::Map<RowMat<T>> matrix(std::size_t index);
  Eigen::Map<const RowMat<T>> matrix(std::size_t index) const;

  void set_zero() { std::fill(data.begin(), data.end(), T(0)); }
  bool all_finite() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    out.tensors = tensors;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

/// Truncated-normal(0.02) weights, residual projections scaled by
/// 1/sqrt(2 num_layers), unit LN gains, zero biases.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// A batch of equally long token sequences, rows ordered sequence-major.
template <typename T>
struct TokenBatch {
  int batch = 0;
  int seq_len = 0;
  RowMat<T> tokens;  // (batch * seq_len) x token_dim
};

template <typename T>
TokenBatch<T> make_batch(std::span<const TokenSequence> seqs);

/// Returns batch x 2 estimates (real, imaginary) read at the final position.
template <typename T>
RowMat<T> forward(const ModelParams<T>& params, const TokenBatch<T>& batch);

/// Mean over the batch of |x_hat - x|^2. Accumulates d(loss)/d(params) into
/// grad when non-null.
template <typename T>
T loss_and_grad(const ModelParams<T>& params, const TokenBatch<T>& batch,
                const RowMat<T>& targets, ModelParams<T>* grad);

/// Checkpoint container: 8-byte magic, u64 header length, JSON header with
/// config, layout version and tensor table, then little-endian float32 data in
/// header order.
void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace cfmimo
