// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xmodal::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,    // bad flags, config or input data
  kExitRuntime = 3,  // numeric failure, corrupt files
};

/// Runs one `xmodal` invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Splices the keys of the JSON object in `--config <file>` into `args` as
/// flags, skipping any flag already present so the command line wins.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace xmodal::cli
