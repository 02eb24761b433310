#pragma once

#include "sdistill/edit.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace sdistill {
namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Loads either a plain EditConfig document or a run manifest (a JSON object
// with a "config" member). Throws std::invalid_argument on any problem.
EditConfig load_config_file(const std::filesystem::path& path);

// Root for default output directories: $SDISTILL_OUTPUT_ROOT or ./runs.
std::filesystem::path output_root();

// Runs one edit and writes manifest.json, log.csv, final.npy (plus final.png
// for shaped images) and metrics.csv into out_dir. Exit code 0 on success,
// 2 for config problems, 3 for runtime aborts (partial log preserved).
// overrides are "dotted.key=value" patches applied before validation, e.g.
// "weights.w_e=1.5"; they are echoed into the manifest like any other key.
int cmd_edit(const std::filesystem::path& input,
             const std::optional<std::filesystem::path>& out_dir,
             const std::vector<std::string>& overrides = {});

// Runs a declared sweep: every config must differ from the others only at
// the --sweep keys. Emits per-run artifacts, a combined CSV keyed by the
// sweep values, a grid plot, and a JSON report. Failed runs do not stop the
// remaining ones.
int cmd_compare(const std::vector<std::filesystem::path>& inputs,
                const std::vector<std::string>& sweep_keys,
                const std::optional<std::filesystem::path>& out_dir, bool grid_plot);

int cmd_selftest(std::ostream& os);

}  // namespace cli
}  // namespace sdistill
