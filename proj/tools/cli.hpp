#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace peermarket::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,     // IO or internal error
  kInfeasible = 2,  // infeasible market or invalid scenario
  kUsage = 3,
};

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "PEERMARKET_OUT";

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace peermarket::cli
