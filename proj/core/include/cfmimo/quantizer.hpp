#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "cfmimo/channel.hpp"
#include "cfmimo/common.hpp"
#include "cfmimo/frame.hpp"

namespace cfmimo {

/// Scalar quantizer designed for a zero-mean unit-variance Gaussian input.
/// bits == 0 denotes the bypass (infinite fronthaul capacity) mode.
struct QuantizerSpec {
  int bits = 0;
  std::vector<double> levels;      // 2^b, ascending
  std::vector<double> thresholds;  // 2^b - 1, ascending
  double distortion = 0.0;         // E[(Q(y) - y)^2] for y ~ N(0, 1)
  double bussgang_gain = 1.0;      // E[Q(y) y] / E[y^2]
  int iterations = 0;

  bool is_bypass() const { return bits == 0; }
  static QuantizerSpec bypass() { return QuantizerSpec{}; }

  /// Index of the cell containing v; boundaries belong to the upper cell.
  int cell(double v) const;
};

struct LloydMaxOptions {
  double tol = 1e-8;
  int max_iters = 10000;
};

/// Thrown when the Lloyd iteration fails to converge; carries the last iterate.
class LloydMaxError : public Error {
 public:
  LloydMaxError(const std::string& what, QuantizerSpec last)
      : Error(ErrorCategory::kNumeric, what), last_(std::move(last)) {}
  const QuantizerSpec& last_iterate() const { return last_; }

 private:
  QuantizerSpec last_;
};

QuantizerSpec design_lloyd_max(int bits, LloydMaxOptions opts = {});

/// Cached designs for b = 1..12 with default options; b = 0 is bypass.
const QuantizerSpec& lloyd_max(int bits);

/// Evaluates D and G for arbitrary levels/thresholds by Gaussian cell integrals.
void compute_gaussian_statistics(QuantizerSpec& spec);

std::vector<double> quantize(std::span<const double> values, const QuantizerSpec& spec,
                             double scale);
double quantize(double value, const QuantizerSpec& spec, double scale);
cdouble quantize(cdouble value, const QuantizerSpec& spec, double scale);

void write_quantizer_csv(std::ostream& os, const QuantizerSpec& spec);

inline constexpr double kMinScale = 1e-9;

/// Per-AP standard deviation of each real component of the received signal.
struct ScalingProfile {
  std::vector<double> scale;
};

ScalingProfile scaling_profile(const TaskConfig& task);

/// Quantized pilots and data; stacked forms are AP-major, antenna-minor.
struct QuantizedFrame {
  std::vector<CMat> Z;
  std::vector<CVec> y;
  CMat Z_stacked;  // NL x T_p
  CVec y_stacked;  // NL
};

QuantizedFrame quantize_frame(const std::vector<CMat>& Z, const std::vector<CVec>& y,
                              const QuantizerSpec& spec, const ScalingProfile& profile);

inline QuantizedFrame quantize_frame(const FrameSignals& frame, const QuantizerSpec& spec,
                                     const ScalingProfile& profile) {
  return quantize_frame(frame.Z, frame.y, spec, profile);
}

}  // namespace cfmimo
