#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rhythm::cli {

/// Runs one subcommand. `args` excludes the program name. Data goes to `out`;
/// failures are reported on `err` as {"error": {"code", "message"}}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, const char* const* argv);

}  // namespace rhythm::cli
