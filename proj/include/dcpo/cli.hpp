#pragma once

namespace dcpo {

// Full command-line entry point (subcommands: run, compare, bounds, report).
// Returns the process exit code: 0 success, 1 runtime failure, 2 usage or
// configuration error.
int run_cli(int argc, const char* const* argv);

}  // namespace dcpo
