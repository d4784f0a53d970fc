#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cellularity::cli {

inline constexpr const char* kToolVersion = "1.0.0";

/// Entry point of the `cellularity` executable. Results go to `out`,
/// diagnostics to `err`. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cellularity::cli
