#include "cfmimo/lmmse.hpp"

#include <atomic>

namespace cfmimo {

namespace {

std::atomic<long> g_regularizations{0};

constexpr double kRidge = 1e-12;

// Solves A X = B for Hermitian positive definite A, adding a ridge when the
// factorization fails.
CMat hermitian_solve(const CMat& a, const CMat& b) {
  Eigen::LLT<CMat> llt(a);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  g_regularizations.fetch_add(1, std::memory_order_relaxed);
  double scale = a.diagonal().real().cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) scale = 1.0;
  CMat reg = a + kRidge * scale * CMat::Identity(a.rows(), a.cols());
  Eigen::LDLT<CMat> ldlt(reg);
  return ldlt.solve(b);
}

}  // namespace

long singular_regularizations() { return g_regularizations.load(); }

BussgangModel bussgang_model(const QuantizerSpec& spec, const ScalingProfile& profile) {
  BussgangModel m;
  m.gain = spec.bussgang_gain;
  m.distortion.resize(profile.scale.size());
  for (std::size_t l = 0; l < profile.scale.size(); ++l) {
    const double s = profile.scale[l];
    // Var(Q(v) - G v) = G (1 - G) s^2 per real component for a centroid quantizer.
    m.distortion[l] = spec.is_bypass() ? 0.0 : 2.0 * s * s * spec.bussgang_gain * spec.distortion;
  }
  return m;
}

LmmseState estimate_channels(const std::vector<CMat>& Zq, const PilotAssignment& assignment,
                             const PilotBook& book, const TaskConfig& task,
                             const BussgangModel& model) {
  const int num_aps = task.num_aps;
  const int k_count = task.num_ues();
  const int n = task.antennas_per_ap;
  const int tp = book.length();
  require(static_cast<int>(Zq.size()) == num_aps && assignment.num_ues() == k_count,
          ErrorCategory::kShape, "estimate_channels: inconsistent dimensions");

  LmmseState st{num_aps, k_count, {}, {}};
  st.h_hat.resize(static_cast<std::size_t>(num_aps) * k_count);
  st.error_cov.resize(st.h_hat.size());

  for (int l = 0; l < num_aps; ++l) {
    require(Zq[l].rows() == n && Zq[l].cols() == tp, ErrorCategory::kShape,
            "estimate_channels: pilot matrix shape mismatch");
    const double eff_noise = (task.noise_power + model.referred_distortion(l)) / tp;
    for (int k = 0; k < k_count; ++k) {
      const int p = assignment.pilot[k];
      const CVec despread = Zq[l] * book.pilot(p).cast<cdouble>() / (model.gain * tp);
      CMat psi = task.R(l, k) + eff_noise * CMat::Identity(n, n);
      for (int j : assignment.collisions[k]) psi += task.R(l, j);
      const CMat& r = task.R(l, k);
      const CMat psi_inv_r = hermitian_solve(psi, r);  // Psi^{-1} R
      st.h_hat[l * k_count + k] = psi_inv_r.adjoint() * despread;
      CMat c = r - r * psi_inv_r;
      st.error_cov[l * k_count + k] = 0.5 * (c + c.adjoint());
    }
  }
  return st;
}

CVec combine(const CVec& y_stacked, const LmmseState& state, const TaskConfig& task,
             const BussgangModel& model, const LmmseOptions& opts) {
  const int num_aps = task.num_aps;
  const int k_count = task.num_ues();
  const int n = task.antennas_per_ap;
  const int nl = n * num_aps;
  require(y_stacked.size() == nl, ErrorCategory::kShape, "combine: data vector length mismatch");

  CMat h(nl, k_count);
  for (int k = 0; k < k_count; ++k) {
    for (int l = 0; l < num_aps; ++l) h.block(l * n, k, n, 1) = state.estimate(l, k);
  }
  CMat sigma = h * h.adjoint();
  for (int l = 0; l < num_aps; ++l) {
    auto blk = sigma.block(l * n, l * n, n, n);
    blk.diagonal().array() += task.noise_power + model.referred_distortion(l);
    if (!opts.assume_perfect_estimates) {
      for (int k = 0; k < k_count; ++k) blk += state.error(l, k);
    }
  }
  const CMat v = hermitian_solve(sigma, h);  // column k is v_k
  return v.adjoint() * (y_stacked / model.gain);
}

CVec lmmse_equalize(const QuantizedFrame& qframe, const PilotAssignment& assignment,
                    const PilotBook& book, const TaskConfig& task, const QuantizerSpec& spec,
                    const ScalingProfile& profile, const LmmseOptions& opts) {
  const BussgangModel model = bussgang_model(spec, profile);
  const LmmseState st = estimate_channels(qframe.Z, assignment, book, task, model);
  return combine(qframe.y_stacked, st, task, model, opts);
}

CVec lmmse_equalize(const FrameSignals& frame, const PilotAssignment& assignment,
                    const PilotBook& book, const TaskConfig& task, const QuantizerSpec& spec,
                    const LmmseOptions& opts) {
  const ScalingProfile profile = scaling_profile(task);
  const QuantizedFrame q = quantize_frame(frame, spec, profile);
  return lmmse_equalize(q, assignment, book, task, spec, profile, opts);
}

}  // namespace cfmimo
