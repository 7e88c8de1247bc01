#pragma once

#include <string>
#include <vector>

namespace nlgrowth::cli {

// Runs one command-line invocation. Exit codes: 0 success, 1 estimation
// failure (status outside the acceptable set), 2 usage or input errors.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

} // namespace nlgrowth::cli
