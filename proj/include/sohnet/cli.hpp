#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sohnet/error.hpp"

namespace sohnet::cli {

// Stable exit-code contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

int exit_code_for(ErrorKind kind) noexcept;

/// Runs one command line (args[0] is the program name). Normal output goes to
/// `out`; resolved settings, progress and errors go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace sohnet::cli
