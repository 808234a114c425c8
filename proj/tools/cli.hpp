#pragma once

#include <string>
#include <vector>

namespace mmkd::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kData = 3,
  kIo = 4,
  kFormat = 5,
  kManifest = 6,
};

/// Runs one command line (args[0] is the program name) and returns the
/// process exit code. Errors are reported on stderr.
int run(const std::vector<std::string>& args);

}  // namespace mmkd::cli
