#include "cfmimo/common.hpp"

namespace cfmimo {

std::string_view to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kDomain: return "domain";
    case ErrorCategory::kNumeric: return "numeric";
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kShape: return "shape";
  }
  return "unknown";
}

}  // namespace cfmimo
