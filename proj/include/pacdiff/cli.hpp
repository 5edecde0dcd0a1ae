#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pacdiff::cli {

enum ExitCode : int { kOk = 0, kIoFailure = 1, kInvalid = 2 };

/// Entry point of the `pacdiff` tool. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace pacdiff::cli
