#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cfmimo/channel.hpp"
#include "cfmimo/frame.hpp"
#include "cfmimo/quantizer.hpp"

namespace cfmimo {

// Token layout (one row per token, d_tok columns, zero padded):
//
//   row 0                      large-scale token of UE k: L encoded r_{l,k}
//   rows 1 .. K_max-1          collider tokens, descending mean, empty slots 0
//   rows K_max + 2i            received pilot i: [Re z_i / s; Im z_i / s] (2NL)
//   rows K_max + 2i + 1        transmitted pilot i: [Re phi_i, Im phi_i]
//   row S-1                    query: [Re y / s; Im y / s; m(X_k)]
//
// Real and imaginary parts are stacked AP-major, antenna-minor. The
// no-large-scale layout drops the first K_max rows.
enum class PromptLayout { kFull, kNoLargeScale };

std::string_view layout_version(PromptLayout layout);
PromptLayout parse_layout(std::string_view text);

struct PromptDims {
  int antennas_per_ap = 2;
  int num_aps = 4;
  int pilot_length = 8;
  int max_ues = 4;

  int token_dim() const;
  int seq_len(PromptLayout layout) const;
  int header_tokens(PromptLayout layout) const;
};

struct TokenSequence {
  PromptLayout layout = PromptLayout::kFull;
  RMat tokens;                // S x d_tok
  std::vector<bool> valid;    // false for padded collider slots

  int seq_len() const { return static_cast<int>(tokens.rows()); }
  int token_dim() const { return static_cast<int>(tokens.cols()); }
};

/// 0.1 * 10 log10(r / sigma^2), clipped to [-5, 5].
double encode_large_scale(double r, double noise_power);

/// Divides each AP block of a stacked NL-vector by that AP's scale.
CVec normalize_signal(const CVec& stacked, const ScalingProfile& profile, int antennas_per_ap);
CVec denormalize_signal(const CVec& normalized, const ScalingProfile& profile,
                        int antennas_per_ap);

struct PromptInputs {
  const TaskConfig& task;
  const PilotAssignment& assignment;
  const PilotBook& book;
  const QuantizedFrame& frame;
  const ScalingProfile& profile;
};

TokenSequence encode_prompt(const PromptInputs& in, int ue, const PromptDims& dims,
                            PromptLayout layout = PromptLayout::kFull);

inline TokenSequence encode_prompt_no_largescale(const PromptInputs& in, int ue,
                                                 const PromptDims& dims) {
  return encode_prompt(in, ue, dims, PromptLayout::kNoLargeScale);
}

/// Inverse of the received-pilot token at channel use i (normalized units).
CVec decode_received_token(const TokenSequence& seq, const PromptDims& dims, int channel_use);
double decode_pilot_token(const TokenSequence& seq, const PromptDims& dims, int channel_use);
CVec decode_query_signal(const TokenSequence& seq, const PromptDims& dims);

}  // namespace cfmimo
