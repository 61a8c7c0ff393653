#pragma once

#include <string>
#include <vector>

namespace asfp {

// Command-line entry point shared by the `asfp` binary and the tests.
// Subcommands: train, extract, flops, bench, gradcheck.
// Exit codes: 0 success, 1 usage error, 2 runtime error.
int run_cli(const std::vector<std::string>& args);

}  // namespace asfp
