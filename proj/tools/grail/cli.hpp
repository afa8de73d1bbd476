#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace grail::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kBadArguments = 2,
  kFormatError = 3,
  kNumericalError = 4,
};

/// Runs one command line (without the program name). Machine-readable
/// results go to `out`, logs and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace grail::cli
