#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cei::cli {

/// Parses and runs one command line. `args` excludes the program name.
/// Returns the process exit code; reports go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cei::cli
