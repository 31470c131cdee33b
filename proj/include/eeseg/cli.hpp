#pragma once

#include <string>
#include <vector>

namespace eeseg::cli {

// Runs one subcommand (datagen | train | eval | quantize | sweep | report).
// Exit codes: 0 success, 1 usage error, 2 runtime error.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);  // without the program name

}  // namespace eeseg::cli
