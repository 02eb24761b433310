#pragma once

#include "sdistill/edit.hpp"

namespace sdistill {
namespace demo {

// 1-D mode-to-mode edit on the exact mixture backend: source mode at -1,
// target mode at +1, null is the equal mixture. With annealed timesteps the
// target mode is the unique attractor of the editing gradient field.
EditConfig convergence_1d_config();

// Two-pixel background-preservation scenario. Pixel 0 is the edited region,
// pixel 1 the background; the source prompt pins the background at its
// (atypical) source value while the data prior favors a different one.
// Running dds vs ssd on the same seed exposes how much background drift each
// estimator admits.
EditConfig preservation_toy_config(Estimator estimator);

}  // namespace demo
}  // namespace sdistill
