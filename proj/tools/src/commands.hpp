#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nowcast::cli {

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kInputError = 2 };

// Runs the `nowcast` command line with args (excluding the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nowcast::cli
