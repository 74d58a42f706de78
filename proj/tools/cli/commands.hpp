#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace sqac::cli {

// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kIoFailure = 2,
  kMissingPrerequisite = 3,
  kConfigFailure = 4,
  kNumericalFailure = 5,
};

// Runs one CLI invocation. `env` holds the SQAC_* override variables.
// Results go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, const std::vector<std::pair<std::string, std::string>>& env,
        std::ostream& out, std::ostream& err);

}  // namespace sqac::cli
