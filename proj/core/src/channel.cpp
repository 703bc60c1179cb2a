#include "cfmimo/channel.hpp"

#include <cmath>
#include <numbers>

#include "cfmimo/rng.hpp"

namespace cfmimo {

void DeploymentConfig::validate() const {
  require(area_side_m > 0.0, ErrorCategory::kConfig, "deployment.area_side_m must be > 0");
  require(num_aps() >= 1, ErrorCategory::kConfig, "deployment.ap_positions must be non-empty");
  require(antennas_per_ap >= 1, ErrorCategory::kConfig,
          "deployment.antennas_per_ap must be >= 1");
  require(ue_min >= 1 && ue_max >= ue_min, ErrorCategory::kConfig,
          "deployment.ue_min/ue_max must satisfy 1 <= ue_min <= ue_max");
  require(min_distance_m >= 0.0, ErrorCategory::kConfig,
          "deployment.min_distance_m must be >= 0");
  require(asd_rad >= 0.0, ErrorCategory::kConfig, "deployment.asd_deg must be >= 0");
  require(shadow_fading_db >= 0.0, ErrorCategory::kConfig,
          "deployment.shadow_fading_db must be >= 0");
  for (const auto& p : ap_positions) {
    require(p.x >= 0.0 && p.x <= area_side_m && p.y >= 0.0 && p.y <= area_side_m,
            ErrorCategory::kConfig, "deployment.ap_positions must lie inside the square");
  }
}

DeploymentConfig DeploymentConfig::full_scale() {
  DeploymentConfig cfg;
  cfg.ap_positions = {{250.0, 250.0}, {250.0, 750.0}, {750.0, 250.0}, {750.0, 750.0}};
  cfg.ue_min = 1;
  cfg.ue_max = 4;
  return cfg;
}

DeploymentConfig DeploymentConfig::desk_scale() {
  DeploymentConfig cfg;
  cfg.ap_positions = {{250.0, 500.0}, {750.0, 500.0}};
  cfg.ue_min = 1;
  cfg.ue_max = 2;
  return cfg;
}

void TaskConfig::refresh_large_scale() {
  large_scale.resize(corr.size());
  for (std::size_t i = 0; i < corr.size(); ++i) {
    large_scale[i] = corr[i].trace().real() / static_cast<double>(corr[i].rows());
  }
}

UeDrop sample_deployment(const DeploymentConfig& cfg, std::uint64_t seed) {
  rng::Engine eng(seed);
  std::uniform_int_distribution<int> count(cfg.ue_min, cfg.ue_max);
  std::uniform_real_distribution<double> coord(0.0, cfg.area_side_m);
  UeDrop drop;
  drop.positions.resize(count(eng));
  for (auto& p : drop.positions) {
    p.x = coord(eng);
    p.y = coord(eng);
  }
  return drop;
}

double pathloss_db(double distance_m, double min_distance_m) {
  if (!(distance_m > 0.0)) {
    fail(ErrorCategory::kDomain, "pathloss_db: distance must be positive");
  }
  return -30.5 - 36.7 * std::log10(std::max(distance_m, min_distance_m));
}

CMat local_scattering_corr(double beta_linear, double nominal_angle_rad,
                           int num_antennas, double asd_rad) {
  require(beta_linear >= 0.0, ErrorCategory::kDomain,
          "local_scattering_corr: beta must be non-negative");
  constexpr double kSpacing = 0.5;  // wavelengths
  const double s = std::sin(nominal_angle_rad);
  const double c = std::cos(nominal_angle_rad);
  CMat r(num_antennas, num_antennas);
  for (int m = 0; m < num_antennas; ++m) {
    for (int n = 0; n < num_antennas; ++n) {
      const double phase = 2.0 * std::numbers::pi * kSpacing * (m - n);
      const double spread = phase * c;
      r(m, n) = beta_linear * std::polar(1.0, phase * s) *
                std::exp(-0.5 * asd_rad * asd_rad * spread * spread);
    }
  }
  return r;
}

TaskConfig build_task(const DeploymentConfig& cfg, double noise_power,
                      std::span<const ConstellationId> constellation_set,
                      std::uint64_t seed) {
  cfg.validate();
  require(!constellation_set.empty(), ErrorCategory::kConfig,
          "build_task: constellation set must be non-empty");
  require(noise_power >= 0.0, ErrorCategory::kConfig, "noise power must be >= 0");

  rng::Engine eng(seed);
  const UeDrop drop = sample_deployment(cfg, eng());

  TaskConfig task;
  task.noise_power = noise_power;
  task.num_aps = cfg.num_aps();
  task.antennas_per_ap = cfg.antennas_per_ap;
  task.ue_positions = drop.positions;

  const int k_count = drop.num_ues();
  std::uniform_int_distribution<std::size_t> pick(0, constellation_set.size() - 1);
  task.constellations.resize(k_count);
  for (auto& c : task.constellations) c = constellation_set[pick(eng)];

  std::normal_distribution<double> shadow(0.0, 1.0);
  task.corr.resize(static_cast<std::size_t>(task.num_aps) * k_count);
  for (int l = 0; l < task.num_aps; ++l) {
    const Point2 ap = cfg.ap_positions[l];
    for (int k = 0; k < k_count; ++k) {
      const Point2 ue = drop.positions[k];
      const double dx = ue.x - ap.x;
      const double dy = ue.y - ap.y;
      const double d = std::max(std::hypot(dx, dy), 1e-3);
      double gain_db = pathloss_db(d, cfg.min_distance_m);
      if (cfg.shadow_fading_db > 0.0) gain_db += cfg.shadow_fading_db * shadow(eng);
      const double beta = std::pow(10.0, gain_db / 10.0);
      task.corr[l * k_count + k] =
          local_scattering_corr(beta, std::atan2(dy, dx), cfg.antennas_per_ap, cfg.asd_rad);
    }
  }
  task.refresh_large_scale();
  return task;
}

CMat psd_sqrt(const CMat& r, double tol) {
  Eigen::SelfAdjointEigenSolver<CMat> eig(r);
  require(eig.info() == Eigen::Success, ErrorCategory::kNumeric,
          "psd_sqrt: eigendecomposition failed");
  RVec lambda = eig.eigenvalues();
  const double scale = lambda.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda[i] < -tol * scale) {
      fail(ErrorCategory::kNumeric, "psd_sqrt: correlation matrix is not PSD");
    }
    // Round-off in a null direction would otherwise leak as sqrt(eps).
    lambda[i] = lambda[i] <= tol * scale ? 0.0 : std::sqrt(lambda[i]);
  }
  return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().adjoint();
}

ChannelRealization sample_channels(const TaskConfig& task, std::uint64_t seed) {
  rng::Engine eng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  const int k_count = task.num_ues();
  ChannelRealization ch{task.num_aps, k_count, {}};
  ch.h.resize(task.corr.size());
  for (std::size_t i = 0; i < task.corr.size(); ++i) {
    const CMat& r = task.corr[i];
    CVec g(r.rows());
    for (Eigen::Index n = 0; n < g.size(); ++n) g[n] = cdouble(gauss(eng), gauss(eng));
    if (r.isZero(0.0)) {
      ch.h[i] = CVec::Zero(r.rows());
    } else {
      ch.h[i] = psd_sqrt(r) * g;
    }
  }
  return ch;
}

double mean_link_snr_db(const TaskConfig& task) {
  double acc = 0.0;
  for (double r : task.large_scale) acc += 10.0 * std::log10(r / task.noise_power);
  return acc / static_cast<double>(task.large_scale.size());
}

}  // namespace cfmimo
