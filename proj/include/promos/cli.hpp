#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace promos::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 validation failure.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace promos::cli
