#pragma once

#include <string>
#include <vector>

namespace idtrace::cli {

// Runs one CLI invocation; args exclude the program name.
// Exit codes: 0 success, 1 partial failures, 2 usage/configuration errors.
int dispatch(const std::vector<std::string>& args);

int main_entry(int argc, char** argv);

}  // namespace idtrace::cli
