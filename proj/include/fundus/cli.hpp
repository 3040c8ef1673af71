#pragma once

#include <iosfwd>

namespace fundus {

// Entry point behind the `fundus` executable. Returns 0 on success, 2 on usage
// errors and 1 when a stage fails.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fundus
