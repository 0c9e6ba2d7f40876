#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mrhd::cli {

// Exit codes: 0 success or help, 1 usage/validation/config error, 2 internal.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mrhd::cli
