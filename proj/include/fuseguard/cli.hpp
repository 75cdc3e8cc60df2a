#ifndef FUSEGUARD_CLI_HPP
#define FUSEGUARD_CLI_HPP

#include <string>
#include <vector>

namespace fuseguard {

// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv);

/// "0.05,0.1" -> {0.05, 0.1}; throws unless strictly ascending.
std::vector<double> parse_ascending_list(const std::string& text);

}  // namespace fuseguard

#endif  // FUSEGUARD_CLI_HPP
