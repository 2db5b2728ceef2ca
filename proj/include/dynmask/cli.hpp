#pragma once

#include <string>
#include <vector>

namespace dynmask::cli {

// Entry point shared by the binary and the tests. Exit codes:
//   0 success, 2 configuration error, 3 input/format error.
int run(const std::vector<std::string>& args);

int run(int argc, char** argv);

}  // namespace dynmask::cli
