#pragma once

#include <ostream>

namespace sdistill {

// Built-in verification: finite-difference check of the analytic backend,
// the scale/decomposition identity of the editing gradient, and the 1-D
// convergence scenario. Prints one line per suite; returns 0 iff all pass.
int run_selftest(std::ostream& os);

}  // namespace sdistill
