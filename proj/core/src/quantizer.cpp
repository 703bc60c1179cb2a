#include "cfmimo/quantizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numbers>
#include <ostream>

namespace cfmimo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double pdf(double x) {
  if (std::isinf(x)) return 0.0;
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// P(a < Y < b) for Y ~ N(0, 1) without cancellation in either tail.
double cell_probability(double a, double b) {
  const double r = std::numbers::sqrt2;
  if (a >= 0.0) return 0.5 * (std::erfc(a / r) - std::erfc(b / r));
  if (b <= 0.0) return 0.5 * (std::erfc(-b / r) - std::erfc(-a / r));
  return 1.0 - 0.5 * std::erfc(b / r) - 0.5 * std::erfc(-a / r);
}

struct Cell {
  double lo;
  double hi;
};

Cell cell_bounds(const std::vector<double>& thresholds, std::size_t i) {
  const double lo = i == 0 ? -kInf : thresholds[i - 1];
  const double hi = i == thresholds.size() ? kInf : thresholds[i];
  return {lo, hi};
}

void midpoints(const std::vector<double>& levels, std::vector<double>& thresholds) {
  thresholds.resize(levels.size() - 1);
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    thresholds[i] = 0.5 * (levels[i] + levels[i + 1]);
  }
}

// Conditional means of every cell, plus their derivatives with respect to
// the lower and upper cell boundaries.
struct Centroids {
  std::vector<double> value;
  std::vector<double> d_lo;
  std::vector<double> d_hi;
};

Centroids centroids(const std::vector<double>& thresholds) {
  const std::size_t m = thresholds.size() + 1;
  Centroids c{std::vector<double>(m), std::vector<double>(m), std::vector<double>(m)};
  for (std::size_t i = 0; i < m; ++i) {
    const auto [lo, hi] = cell_bounds(thresholds, i);
    const double p = std::max(cell_probability(lo, hi), std::numeric_limits<double>::min());
    const double f_lo = pdf(lo);
    const double f_hi = pdf(hi);
    const double mean = (f_lo - f_hi) / p;
    c.value[i] = mean;
    c.d_lo[i] = std::isinf(lo) ? 0.0 : f_lo * (mean - lo) / p;
    c.d_hi[i] = std::isinf(hi) ? 0.0 : f_hi * (hi - mean) / p;
  }
  return c;
}

// Newton step on F(l) = centroid(l) - l; the Jacobian is tridiagonal.
std::vector<double> newton_step(const std::vector<double>& levels, const Centroids& c) {
  const std::size_t m = levels.size();
  std::vector<double> lower(m, 0.0), diag(m), upper(m, 0.0), rhs(m);
  for (std::size_t i = 0; i < m; ++i) {
    diag[i] = 0.5 * (c.d_lo[i] + c.d_hi[i]) - 1.0;
    if (i > 0) lower[i] = 0.5 * c.d_lo[i];
    if (i + 1 < m) upper[i] = 0.5 * c.d_hi[i];
    rhs[i] = -(c.value[i] - levels[i]);
  }
  // Thomas algorithm; the system is strictly diagonally dominant.
  for (std::size_t i = 1; i < m; ++i) {
    const double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  std::vector<double> step(m);
  step[m - 1] = rhs[m - 1] / diag[m - 1];
  for (std::size_t i = m - 1; i-- > 0;) step[i] = (rhs[i] - upper[i] * step[i + 1]) / diag[i];
  std::vector<double> next(m);
  for (std::size_t i = 0; i < m; ++i) next[i] = levels[i] + step[i];
  return next;
}

bool strictly_ascending(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

}  // namespace

int QuantizerSpec::cell(double v) const {
  return static_cast<int>(std::upper_bound(thresholds.begin(), thresholds.end(), v) -
                          thresholds.begin());
}

void compute_gaussian_statistics(QuantizerSpec& spec) {
  if (spec.is_bypass()) {
    spec.distortion = 0.0;
    spec.bussgang_gain = 1.0;
    return;
  }
  double d = 0.0;
  double g = 0.0;
  for (std::size_t i = 0; i < spec.levels.size(); ++i) {
    const auto [lo, hi] = cell_bounds(spec.thresholds, i);
    const double p = cell_probability(lo, hi);
    const double first = pdf(lo) - pdf(hi);  // E[Y; cell]
    const double lo_term = std::isinf(lo) ? 0.0 : lo * pdf(lo);
    const double hi_term = std::isinf(hi) ? 0.0 : hi * pdf(hi);
    const double second = p + lo_term - hi_term;  // E[Y^2; cell]
    const double q = spec.levels[i];
    d += second - 2.0 * q * first + q * q * p;
    g += q * first;
  }
  spec.distortion = d;
  spec.bussgang_gain = g;
}

QuantizerSpec design_lloyd_max(int bits, LloydMaxOptions opts) {
  require(bits >= 1 && bits <= 12, ErrorCategory::kDomain,
          "design_lloyd_max: bits must be in [1, 12], got " + std::to_string(bits));
  const std::size_t m = std::size_t{1} << bits;

  QuantizerSpec spec;
  spec.bits = bits;
  spec.levels.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    spec.levels[i] = -4.0 + (static_cast<double>(i) + 0.5) * 8.0 / static_cast<double>(m);
  }

  bool converged = false;
  int it = 0;
  for (; it < opts.max_iters; ++it) {
    midpoints(spec.levels, spec.thresholds);
    const Centroids c = centroids(spec.thresholds);
    double change = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      change = std::max(change, std::abs(c.value[i] - spec.levels[i]));
    }
    if (change < opts.tol) {
      spec.levels = c.value;
      converged = true;
      break;
    }
    std::vector<double> accelerated = newton_step(spec.levels, c);
    spec.levels = strictly_ascending(accelerated) ? std::move(accelerated) : c.value;
  }

  // Exact symmetry and midpoint thresholds for the final levels.
  for (std::size_t i = 0; i < m / 2; ++i) {
    const double a = 0.5 * (spec.levels[m - 1 - i] - spec.levels[i]);
    spec.levels[i] = -a;
    spec.levels[m - 1 - i] = a;
  }
  midpoints(spec.levels, spec.thresholds);
  if (m % 2 == 0) spec.thresholds[m / 2 - 1] = 0.0;
  spec.iterations = it;
  compute_gaussian_statistics(spec);

  if (!converged) {
    throw LloydMaxError("design_lloyd_max: no convergence for b=" + std::to_string(bits) +
                            " within " + std::to_string(opts.max_iters) + " iterations",
                        spec);
  }
  return spec;
}

const QuantizerSpec& lloyd_max(int bits) {
  static std::array<QuantizerSpec, 13> cache;
  static std::array<std::once_flag, 13> once;
  require(bits >= 0 && bits <= 12, ErrorCategory::kDomain,
          "lloyd_max: bits must be in [0, 12]");
  std::call_once(once[bits], [bits] {
    cache[bits] = bits == 0 ? QuantizerSpec::bypass() : design_lloyd_max(bits);
  });
  return cache[bits];
}

double quantize(double value, const QuantizerSpec& spec, double scale) {
  if (!std::isfinite(value)) fail(ErrorCategory::kDomain, "quantize: non-finite input");
  if (spec.is_bypass()) return value;
  require(scale > 0.0, ErrorCategory::kDomain, "quantize: scale must be positive");
  return scale * spec.levels[spec.cell(value / scale)];
}

cdouble quantize(cdouble value, const QuantizerSpec& spec, double scale) {
  return {quantize(value.real(), spec, scale), quantize(value.imag(), spec, scale)};
}

std::vector<double> quantize(std::span<const double> values, const QuantizerSpec& spec,
                             double scale) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [&](double v) { return quantize(v, spec, scale); });
  return out;
}

void write_quantizer_csv(std::ostream& os, const QuantizerSpec& spec) {
  os << "index,level,upper_threshold\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < spec.levels.size(); ++i) {
    os << i << ',' << spec.levels[i] << ',';
    if (i < spec.thresholds.size()) os << spec.thresholds[i];
    os << '\n';
  }
}

ScalingProfile scaling_profile(const TaskConfig& task) {
  ScalingProfile p;
  p.scale.resize(task.num_aps);
  for (int l = 0; l < task.num_aps; ++l) {
    double power = task.noise_power;
    for (int k = 0; k < task.num_ues(); ++k) power += task.r(l, k);
    p.scale[l] = std::max(std::sqrt(power / 2.0), kMinScale);
  }
  return p;
}

QuantizedFrame quantize_frame(const std::vector<CMat>& Z, const std::vector<CVec>& y,
                              const QuantizerSpec& spec, const ScalingProfile& profile) {
  require(Z.size() == y.size() && Z.size() == profile.scale.size(), ErrorCategory::kShape,
          "quantize_frame: per-AP inputs disagree in AP count");
  QuantizedFrame q;
  const auto num_aps = static_cast<Eigen::Index>(Z.size());
  const Eigen::Index n = num_aps > 0 ? Z[0].rows() : 0;
  const Eigen::Index tp = num_aps > 0 ? Z[0].cols() : 0;
  q.Z_stacked.resize(n * num_aps, tp);
  q.y_stacked.resize(n * num_aps);
  for (Eigen::Index l = 0; l < num_aps; ++l) {
    require(Z[l].rows() == n && Z[l].cols() == tp && y[l].size() == n, ErrorCategory::kShape,
            "quantize_frame: inconsistent per-AP dimensions");
    const double s = profile.scale[l];
    CMat zq = Z[l].unaryExpr([&](cdouble v) { return quantize(v, spec, s); });
    CVec yq = y[l].unaryExpr([&](cdouble v) { return quantize(v, spec, s); });
    q.Z_stacked.middleRows(l * n, n) = zq;
    q.y_stacked.segment(l * n, n) = yq;
    q.Z.push_back(std::move(zq));
    q.y.push_back(std::move(yq));
  }
  return q;
}

}  // namespace cfmimo
