// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace qwen2::cli {

enum ExitCode : int { kOk = 0, kValidationFailure = 1, kUsageError = 2 };

/// Runs one qwen2ctl invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qwen2::cli
