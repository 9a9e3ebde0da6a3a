#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "protst/common.hpp"

namespace protst::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitGraph = 3;
inline constexpr int kExitCheckpoint = 4;
inline constexpr int kExitData = 5;

int exit_code_for(ErrorCode code);

// Runs one command line (without the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protst::cli
