#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace attnprobe::cli {

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on a usage or validation error, 2 on an I/O error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

/// Long flag names of every subcommand, in declaration order.
std::map<std::string, std::vector<std::string>> flag_table();

}  // namespace attnprobe::cli
