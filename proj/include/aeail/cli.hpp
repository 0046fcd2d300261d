#pragma once

namespace aeail {

// Command-line front end. Returns 0 on success, 1 on a usage error and 2 on
// a runtime fault.
int cli(int argc, const char* const* argv);

}  // namespace aeail
