#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace coinnet::cli {

// Exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kBadInput = 4,
  kShapeMismatch = 5,
  kDiverged = 6,
  kCheckFailed = 7,
};

// Runs one invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace coinnet::cli
