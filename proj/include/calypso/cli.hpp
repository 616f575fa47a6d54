#pragma once

// Batch command line front end.

#include <string>
#include <string_view>
#include <vector>

namespace calypso::cli {

/// Runs one subcommand. Returns 0 on success, 2 for usage errors, 3 for data
/// errors and 4 for numerical aborts; failures print one line to stderr:
///   calypso: error code=<Code> category=<usage|data|numerical> message="..."
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

std::string_view git_describe() noexcept;

} // namespace calypso::cli
