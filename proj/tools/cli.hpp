#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace impact_gate::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kBackendError = 3 };

/// Runs one `impact_gate` invocation. args excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace impact_gate::cli
