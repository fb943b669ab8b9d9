#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace eaxl {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitCheckpoint = 3 };

/// Runs one `eaxl` command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err);

}  // namespace eaxl
