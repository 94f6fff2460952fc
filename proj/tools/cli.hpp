#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace formu::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,       ///< bad flags, config, or input validation
    kTransport = 3,   ///< endpoint unreachable or rejected the request
    kParseFailed = 4, ///< no LLM response could be parsed
};

/// Runs the `formu` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace formu::cli
