#pragma once

// Entry point shared by the whoi binary and the CLI tests. Parses arguments
// (program name excluded), dispatches to the subcommand, and writes all
// human-facing text to the supplied streams.

#include <iosfwd>
#include <string>
#include <vector>

namespace whoi::cli {

// Exit codes: 0 success, 2 bad usage or bad configuration (including files
// that are missing or fail to parse), 3 runtime failure (divergence, a failed
// gradient audit).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace whoi::cli
