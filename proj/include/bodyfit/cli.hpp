#pragma once

#include <string>
#include <vector>

namespace bodyfit {

// Exit codes: 0 success, 1 validation error, 2 numerical failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace bodyfit
