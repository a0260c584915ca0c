#pragma once

#include <string>
#include <vector>

namespace reg {

// Full command-line pipeline. Returns the process exit code:
//   0 success, 1 validation/usage error, 2 runtime or numeric failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace reg
