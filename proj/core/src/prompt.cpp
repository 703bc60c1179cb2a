#include "cfmimo/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cfmimo {

std::string_view layout_version(PromptLayout layout) {
  return layout == PromptLayout::kFull ? "cfmimo-prompt-full-v1" : "cfmimo-prompt-nols-v1";
}

PromptLayout parse_layout(std::string_view text) {
  if (text == "full" || text == layout_version(PromptLayout::kFull)) return PromptLayout::kFull;
  if (text == "no_ls" || text == layout_version(PromptLayout::kNoLargeScale)) {
    return PromptLayout::kNoLargeScale;
  }
  fail(ErrorCategory::kConfig, "unknown prompt layout '" + std::string(text) + "'");
}

int PromptDims::token_dim() const {
  return std::max(2 * antennas_per_ap * num_aps + 1, num_aps);
}

int PromptDims::header_tokens(PromptLayout layout) const {
  return layout == PromptLayout::kFull ? max_ues : 0;
}

int PromptDims::seq_len(PromptLayout layout) const {
  return header_tokens(layout) + 2 * pilot_length + 1;
}

double encode_large_scale(double r, double noise_power) {
  double db;
  if (noise_power > 0.0 && r > 0.0) {
    db = 10.0 * std::log10(r / noise_power);
  } else {
    db = r > 0.0 ? 100.0 : -100.0;
  }
  return std::clamp(0.1 * db, -5.0, 5.0);
}

CVec normalize_signal(const CVec& stacked, const ScalingProfile& profile, int antennas_per_ap) {
  CVec out = stacked;
  for (std::size_t l = 0; l < profile.scale.size(); ++l) {
    out.segment(static_cast<Eigen::Index>(l) * antennas_per_ap, antennas_per_ap) /=
        profile.scale[l];
  }
  return out;
}

CVec denormalize_signal(const CVec& normalized, const ScalingProfile& profile,
                        int antennas_per_ap) {
  CVec out = normalized;
  for (std::size_t l = 0; l < profile.scale.size(); ++l) {
    out.segment(static_cast<Eigen::Index>(l) * antennas_per_ap, antennas_per_ap) *=
        profile.scale[l];
  }
  return out;
}

namespace {

void put_complex(RMat& tokens, int row, const CVec& v) {
  const auto n = v.size();
  tokens.row(row).segment(0, n) = v.real().transpose();
  tokens.row(row).segment(n, n) = v.imag().transpose();
}

CVec get_complex(const RMat& tokens, int row, Eigen::Index n) {
  CVec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = cdouble(tokens(row, i), tokens(row, n + i));
  return v;
}

}  // namespace

TokenSequence encode_prompt(const PromptInputs& in, int ue, const PromptDims& dims,
                            PromptLayout layout) {
  const TaskConfig& task = in.task;
  const int nl = dims.antennas_per_ap * dims.num_aps;
  require(task.num_aps == dims.num_aps && task.antennas_per_ap == dims.antennas_per_ap,
          ErrorCategory::kShape, "encode_prompt: task geometry does not match prompt dims");
  require(in.book.length() == dims.pilot_length && in.frame.Z_stacked.cols() == dims.pilot_length,
          ErrorCategory::kShape, "encode_prompt: context must hold exactly T_p pairs");
  require(in.frame.Z_stacked.rows() == nl && in.frame.y_stacked.size() == nl,
          ErrorCategory::kShape, "encode_prompt: stacked signal length must be NL");
  require(ue >= 0 && ue < task.num_ues() && in.assignment.num_ues() == task.num_ues(),
          ErrorCategory::kShape, "encode_prompt: UE index out of range");
  require(task.num_ues() <= dims.max_ues, ErrorCategory::kShape,
          "encode_prompt: task has more UEs than the layout supports");
  const auto& colliders = in.assignment.collisions[ue];
  require(static_cast<int>(colliders.size()) <= dims.max_ues - 1, ErrorCategory::kShape,
          "encode_prompt: collision set larger than K_max - 1");

  TokenSequence seq;
  seq.layout = layout;
  seq.tokens = RMat::Zero(dims.seq_len(layout), dims.token_dim());
  seq.valid.assign(seq.tokens.rows(), true);

  int row = 0;
  if (layout == PromptLayout::kFull) {
    auto large_scale = [&](int k) {
      RVec v(dims.num_aps);
      for (int l = 0; l < dims.num_aps; ++l) v[l] = encode_large_scale(task.r(l, k), task.noise_power);
      return v;
    };
    seq.tokens.row(row++).head(dims.num_aps) = large_scale(ue).transpose();

    std::vector<std::pair<double, int>> order;
    std::vector<RVec> enc;
    for (int j : colliders) {
      enc.push_back(large_scale(j));
      order.emplace_back(enc.back().mean(), static_cast<int>(enc.size()) - 1);
    }
    std::vector<int> ue_of(colliders.begin(), colliders.end());
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return ue_of[a.second] < ue_of[b.second];
    });
    for (int slot = 0; slot < dims.max_ues - 1; ++slot) {
      if (slot < static_cast<int>(order.size())) {
        seq.tokens.row(row).head(dims.num_aps) = enc[order[slot].second].transpose();
      } else {
        seq.valid[row] = false;
      }
      ++row;
    }
  }

  const Eigen::VectorXd pilot = in.book.pilot(in.assignment.pilot[ue]);
  for (int i = 0; i < dims.pilot_length; ++i) {
    const CVec z = normalize_signal(in.frame.Z_stacked.col(i), in.profile, dims.antennas_per_ap);
    put_complex(seq.tokens, row++, z);
    seq.tokens(row, 0) = pilot[i];
    seq.tokens(row, 1) = 0.0;
    ++row;
  }

  const CVec y = normalize_signal(in.frame.y_stacked, in.profile, dims.antennas_per_ap);
  put_complex(seq.tokens, row, y);
  seq.tokens(row, 2 * nl) = modulation_index(task.constellations[ue]);
  return seq;
}

CVec decode_received_token(const TokenSequence& seq, const PromptDims& dims, int channel_use) {
  const int row = dims.header_tokens(seq.layout) + 2 * channel_use;
  return get_complex(seq.tokens, row, dims.antennas_per_ap * dims.num_aps);
}

double decode_pilot_token(const TokenSequence& seq, const PromptDims& dims, int channel_use) {
  return seq.tokens(dims.header_tokens(seq.layout) + 2 * channel_use + 1, 0);
}

CVec decode_query_signal(const TokenSequence& seq, const PromptDims& dims) {
  return get_complex(seq.tokens, seq.seq_len() - 1, dims.antennas_per_ap * dims.num_aps);
}

}  // namespace cfmimo
