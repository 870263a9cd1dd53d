#pragma once

#include <iosfwd>

namespace hnll {

// Runs one subcommand. Returns 0 on success, 1 on validation errors (bad
// flags or configuration), 2 on runtime failures.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hnll
