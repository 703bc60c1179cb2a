#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cfmimo::cli {

// Exit codes. Failures also print "error[<category>]: <message>" on stderr.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 64;
inline constexpr int kConfigError = 65;
inline constexpr int kDomainError = 66;
inline constexpr int kNumericError = 67;
inline constexpr int kIoError = 74;
inline constexpr int kShapeError = 68;
inline constexpr int kInternalError = 70;

int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfmimo::cli
