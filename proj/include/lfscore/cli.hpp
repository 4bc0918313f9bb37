#pragma once

#include <iosfwd>

namespace lfs {

// Exit codes: 0 ok, 2 usage, 3 data, 4 numerical.  Errors go to err as one JSON line.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lfs
