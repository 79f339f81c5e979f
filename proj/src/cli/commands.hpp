#pragma once

#include "ghme/errors.hpp"

namespace ghme::cli {

// Process exit codes.
enum ExitCode : int {
    exit_ok = 0,
    exit_config = 2,
    exit_data = 3,
    exit_numerical = 4,
};

int exit_code_for(ErrorKind kind);
// One-line suggestion for a numerical failure, empty when none applies.
const char* remediation_hint(ErrorKind kind);

// Entry point of the ghme tool: simulate, fit, mc and predict subcommands.
int run(int argc, char** argv);

}  // namespace ghme::cli
