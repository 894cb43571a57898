#pragma once

#include <ostream>

namespace twinsight {

// Gradient checks and oracle comparisons over the numeric core. Prints one
// "ok"/"FAIL" line per suite; returns true when every suite passed.
bool run_selftest(std::ostream& out);

}  // namespace twinsight
