#pragma once

#include <iosfwd>

namespace histopipe::cli {

/// Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace histopipe::cli
