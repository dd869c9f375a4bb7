#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ccrl::cli {

/// Runs one command line (without the program name). Returns the process
/// exit code: 0 success, 1 user error, 2 internal invariant violation.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ccrl::cli
