#pragma once

#include <string>
#include <vector>

namespace lesion {

/// Entry point of the `lesion` command-line tool. Returns the process exit
/// code; errors are reported on stderr.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace lesion
