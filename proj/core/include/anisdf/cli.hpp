#pragma once

namespace anisdf::cli {

// Entry point behind the `anisdf` binary; also callable in-process by tests.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int dispatch(int argc, const char* const* argv);

}  // namespace anisdf::cli
