#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fusionforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (arguments after the program name) and returns the
/// process exit code. Human-readable results go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fusionforge::cli
