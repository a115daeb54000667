#pragma once

namespace aat::cli {

// Full command-line front end.  Returns the process exit code: 0 on
// success, 2 on usage errors, 3 when an input file is missing, 4 when an
// invariant or data check fails.  Errors land on stderr as one-line JSON.
int run(int argc, char** argv);

}  // namespace aat::cli
