#pragma once

#include <cstddef>
#include <iosfwd>

namespace advit::cli {

// Stable process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUnexpected = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kNumericError = 4;
inline constexpr int kVerificationFailed = 5;

/// Gradcheck refuses models larger than this.
inline constexpr std::size_t kGradcheckParamCap = 50000;

/// Runs one command line (argv[0] is the program name) and returns the exit
/// code; nothing is printed to std::cout/std::cerr directly.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace advit::cli
