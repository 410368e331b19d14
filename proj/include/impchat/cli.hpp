#pragma once

// The `impchat` command line: build-data, train, evaluate, rank, ablate.

#include <ostream>
#include <string>
#include <vector>

namespace impchat {

enum ExitCode : int {
  exit_ok = 0,
  exit_failure = 1,    // unexpected error
  exit_bad_input = 2,  // missing or invalid input
  exit_degenerate = 3,  // configuration that cannot produce a useful model
  exit_mismatch = 4,   // artifacts produced under different configs or vocabularies
};

/// Runs one command.  `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace impchat
