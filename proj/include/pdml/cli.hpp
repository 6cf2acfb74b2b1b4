#pragma once

namespace pdml {

/// Command-line entry point: synth, train, eval, predict-map, gradcheck.
/// Returns the process exit code (0 success, 1 failed gradcheck, 2 argument
/// errors, 3 I/O errors, 4 numeric failures).
int run(int argc, char** argv);

}  // namespace pdml
