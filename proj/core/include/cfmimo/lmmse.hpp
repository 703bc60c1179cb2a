#pragma once

#include <vector>

#include "cfmimo/channel.hpp"
#include "cfmimo/frame.hpp"
#include "cfmimo/quantizer.hpp"

namespace cfmimo {

/// Linearized fronthaul: Q(v) = G v + eta with eta uncorrelated with v.
/// distortion[l] is the variance of eta per complex entry at AP l.
struct BussgangModel {
  double gain = 1.0;
  std::vector<double> distortion;

  /// Distortion power referred to the quantizer input, d_l / G^2.
  double referred_distortion(int l) const { return distortion[l] / (gain * gain); }
};

BussgangModel bussgang_model(const QuantizerSpec& spec, const ScalingProfile& profile);

/// Channel estimates and error covariances, indexed [l * K + k].
struct LmmseState {
  int num_aps = 0;
  int num_ues = 0;
  std::vector<CVec> h_hat;
  std::vector<CMat> error_cov;

  const CVec& estimate(int l, int k) const { return h_hat[l * num_ues + k]; }
  const CMat& error(int l, int k) const { return error_cov[l * num_ues + k]; }
};

struct LmmseOptions {
  /// Drop the estimation-error covariance from the combining covariance.
  bool assume_perfect_estimates = true;
};

/// Counts ridge regularizations applied to singular systems (process-wide).
long singular_regularizations();

LmmseState estimate_channels(const std::vector<CMat>& Zq, const PilotAssignment& assignment,
                             const PilotBook& book, const TaskConfig& task,
                             const BussgangModel& model);

CVec combine(const CVec& y_stacked, const LmmseState& state, const TaskConfig& task,
             const BussgangModel& model, const LmmseOptions& opts = {});

/// Quantize, estimate and combine. A bypass spec gives the infinite-capacity
/// baseline.
CVec lmmse_equalize(const FrameSignals& frame, const PilotAssignment& assignment,
                    const PilotBook& book, const TaskConfig& task, const QuantizerSpec& spec,
                    const LmmseOptions& opts = {});

CVec lmmse_equalize(const QuantizedFrame& qframe, const PilotAssignment& assignment,
                    const PilotBook& book, const TaskConfig& task, const QuantizerSpec& spec,
                    const ScalingProfile& profile, const LmmseOptions& opts = {});

}  // namespace cfmimo
