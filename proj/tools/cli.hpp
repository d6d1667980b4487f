#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ufw::cli {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;

// Runs one command line (without the program name). Data goes to `out`,
// diagnostics and logs to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ufw::cli
