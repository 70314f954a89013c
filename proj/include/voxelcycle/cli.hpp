#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace voxelcycle {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,    // bad flags, unknown subcommand, invalid config
  kExitData = 2,     // unreadable or malformed files, shape and label errors
  kExitNumeric = 3,  // non-finite values, gradient check failures
};

// Runs one invocation; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace voxelcycle
