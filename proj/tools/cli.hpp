#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pse::cli {

// Runs one subcommand. Result JSON (or error JSON) goes to `out`; CSV tables
// go to the paths named in the config. Returns the process exit code:
// 0 on success, 1 for runtime failures, 2 for usage and config errors.
int run(const std::vector<std::string>& args, std::ostream& out);

}  // namespace pse::cli
