#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace makgcn::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

// Runs one command line (args exclude the program name). Never throws.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace makgcn::cli
