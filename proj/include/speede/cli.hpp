#pragma once

#include <string>
#include <vector>

namespace speede {

// Single-binary front end: synth, prune, group, deform, render, eval, bench,
// sweep. `args` excludes the program name. Returns the process exit code:
// 0 success, 1 runtime/validation failure, 2 usage or config error.
int run_cli(const std::vector<std::string>& args);

// Same dispatch, but errors propagate as exceptions (usage errors become
// ConfigError) instead of being printed and mapped to exit codes. The python
// bindings translate them into python exceptions.
void run_cli_or_throw(const std::vector<std::string>& args);

}  // namespace speede
