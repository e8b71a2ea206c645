#pragma once

#include <iosfwd>

namespace mlsa::cli {

enum ExitCode : int {
  kOk = 0,
  kSourceError = 2,
  kDataError = 3,
  kModelError = 4,
  kInternalError = 5,
};

// Runs the `mlsa` command line. Output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Installs SIGINT/SIGTERM handlers that request a graceful stop.
void install_signal_handlers();

}  // namespace mlsa::cli
