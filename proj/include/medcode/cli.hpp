#pragma once

#include <string>
#include <vector>

namespace medcode {

// Exit codes: 0 success, 2 usage/config, 3 data/io, 4 backend, 5 fingerprint
// mismatch. Nonzero exits also emit a JSON error record on stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace medcode
