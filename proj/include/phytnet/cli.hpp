#pragma once

namespace phytnet {

// Parses argv and dispatches one verb. Returns the process exit code:
// 0 success, 1 usage error (message names the offending flag), 2 runtime
// failure (message names the failing stage).
int run_cli(int argc, const char* const* argv);

}  // namespace phytnet
