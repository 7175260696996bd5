#pragma once

// Single entry point wiring all pipelines. Exposed as a library call so the
// test suites can drive the exact code path the binary runs.

#include <string>
#include <vector>

namespace octquant::cli {

/// Runs one command line (without the program name). Returns 0 on success,
/// 1 on validation errors, 2 on processing errors; errors are reported as a
/// JSON object on stderr. All file outputs are written atomically.
int run(const std::vector<std::string>& args);

}  // namespace octquant::cli
