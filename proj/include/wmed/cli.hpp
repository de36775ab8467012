#pragma once

// Command-line front end. Exit codes: 0 success, 1 a check reported failure
// (verify, experiment), 2 usage or input error, 3 solver did not converge
// (partial outputs are still written). One JSON line goes to `out`;
// diagnostics and progress go to `err`.

#include <iosfwd>
#include <string>
#include <vector>

namespace wmed::cli {

inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kUsage = 2;
inline constexpr int kNoConvergence = 3;

/// Name of the environment variable holding the worker thread count.
inline constexpr const char* kThreadsEnv = "WMED_THREADS";

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace wmed::cli
