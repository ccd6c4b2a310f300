#pragma once

#include <ostream>

namespace dashfusion {

/// Entry point of the `dashfusion` tool. Reports go to `out`, diagnostics and
/// usage text to `err`. Returns the process exit code.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dashfusion
