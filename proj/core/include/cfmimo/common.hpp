#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace cfmimo {

using cdouble = std::complex<double>;

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

/// Coarse error classes surfaced to the command line as exit codes.
enum class ErrorCategory {
  kConfig,   // infeasible or malformed configuration
  kDomain,   // argument outside the mathematical domain
  kNumeric,  // non-convergence, NaN, indefinite matrices
  kIo,       // file system and format errors
  kShape,    // dimension mismatches
};

std::string_view to_string(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) {
  throw Error(c, msg);
}

inline void require(bool ok, ErrorCategory c, const std::string& msg) {
  if (!ok) fail(c, msg);
}

}  // namespace cfmimo
