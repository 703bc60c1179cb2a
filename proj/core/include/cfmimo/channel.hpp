#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cfmimo/common.hpp"
#include "cfmimo/constellation.hpp"

namespace cfmimo {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Geometry and radio parameters of a square cell-free deployment.
struct DeploymentConfig {
  double area_side_m = 1000.0;
  int antennas_per_ap = 2;
  double carrier_hz = 2.0e9;
  std::vector<Point2> ap_positions;
  int ue_min = 1;
  int ue_max = 4;
  double min_distance_m = 10.0;
  double asd_rad = 15.0 * 3.14159265358979323846 / 180.0;
  double shadow_fading_db = 0.0;  // log-normal std; 0 disables

  int num_aps() const { return static_cast<int>(ap_positions.size()); }

  /// Throws ErrorCategory::kConfig when an invariant is violated.
  void validate() const;

  /// Four APs at the quadrant centers of a 1 km square, N = 2, K ~ U[1, 4].
  static DeploymentConfig full_scale();
  /// Two APs on the horizontal midline, N = 2, K ~ U[1, 2].
  static DeploymentConfig desk_scale();
};

/// One equalization task: noise power, users, alphabets and per-link
/// spatial correlation. corr and large_scale are indexed [l * K + k].
struct TaskConfig {
  double noise_power = 1.0;
  int num_aps = 0;
  int antennas_per_ap = 0;
  std::vector<Point2> ue_positions;
  std::vector<ConstellationId> constellations;
  std::vector<CMat> corr;
  std::vector<double> large_scale;

  int num_ues() const { return static_cast<int>(constellations.size()); }
  const CMat& R(int l, int k) const { return corr[l * num_ues() + k]; }
  double r(int l, int k) const { return large_scale[l * num_ues() + k]; }

  /// Recomputes large_scale from corr.
  void refresh_large_scale();
};

/// h[l * K + k] is the N-vector channel between AP l and UE k.
struct ChannelRealization {
  int num_aps = 0;
  int num_ues = 0;
  std::vector<CVec> h;

  const CVec& at(int l, int k) const { return h[l * num_ues + k]; }
  CVec& at(int l, int k) { return h[l * num_ues + k]; }
};

struct UeDrop {
  std::vector<Point2> positions;
  int num_ues() const { return static_cast<int>(positions.size()); }
};

UeDrop sample_deployment(const DeploymentConfig& cfg, std::uint64_t seed);

/// UMi path loss in dB: -30.5 - 36.7 log10(max(d, min_distance_m)).
double pathloss_db(double distance_m, double min_distance_m = 0.0);

/// Gaussian local scattering model for a half-wavelength uniform linear
/// array; small-angle closed form.
CMat local_scattering_corr(double beta_linear, double nominal_angle_rad,
                           int num_antennas, double asd_rad);

TaskConfig build_task(const DeploymentConfig& cfg, double noise_power,
                      std::span<const ConstellationId> constellation_set,
                      std::uint64_t seed);

/// Hermitian square root with eigenvalues above -tol clamped to zero.
/// Throws ErrorCategory::kNumeric on an indefinite matrix.
CMat psd_sqrt(const CMat& r, double tol = 1e-10);

ChannelRealization sample_channels(const TaskConfig& task, std::uint64_t seed);

/// Average of 10 log10(tr(R_lk) / (N sigma^2)) over all links of a task.
double mean_link_snr_db(const TaskConfig& task);

}  // namespace cfmimo
