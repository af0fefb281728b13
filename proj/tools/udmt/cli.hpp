#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace udmt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs the udmt command line (args excludes the program name). Exit codes:
/// 0 success, 1 runtime failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace udmt::cli
