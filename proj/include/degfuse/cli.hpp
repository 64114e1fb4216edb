// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace degfuse {

/// Entry point of the `degfuse` tool. Subcommands: prepare, degrade, train,
/// fuse, eval. Returns the process exit code; diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace degfuse
