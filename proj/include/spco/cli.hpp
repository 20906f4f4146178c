#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spco::cli {

// Runs the command line given without the program name. Returns the process
// exit code; failures are reported on err as a single JSON object.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spco::cli
