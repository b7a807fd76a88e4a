#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ivlate::cli {

inline constexpr const char* kVersion = "ivlate 0.1.0";

// Runs one command line (without the program name). Reports go to `out`,
// diagnostics to `err`. Returns 0 on success, 1 on domain errors and 2 on
// configuration errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ivlate::cli
