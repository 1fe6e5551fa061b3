#pragma once

#include <string>
#include <vector>

namespace comma::cli {

// Runs one subcommand; `args` excludes the program name. Errors are printed
// to stderr as a single JSON line and mapped to the documented exit codes
// (0 ok, 2 config, 3 data, 4 runtime), so tests can drive the binary
// in-process.
int run(const std::vector<std::string>& args);

}  // namespace comma::cli
