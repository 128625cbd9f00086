#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace regscope::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitComputeError = 2;

/// Entry point behind the `registerscope` binary. `args` excludes the
/// program name. Errors are reported on `err` as one JSON object per line.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace regscope::cli
