#include "sdistill/cli_ops.hpp"

#include "sdistill/io.hpp"
#include "sdistill/metrics.hpp"
#include "sdistill/selftest.hpp"
#include "sdistill/version.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

namespace sdistill {
namespace cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string log_to_csv(const EditLog& log) {
    std::string out =
        "iter,t,estimator,grad_norm,mse_to_source,cross_prompt_norm,cross_traj_norm,align_norm,"
        "id_norm\n";
    for (const auto& rec : log) {
        out += std::to_string(rec.iter);
        out += ',';
        out += std::to_string(rec.t);
        out += ',';
        out += to_string(rec.estimator);
        out += ',';
        out += io::format_double(rec.grad_norm);
        out += ',';
        out += io::format_double(rec.mse_to_source);
        out += ',';
        out += io::format_double(rec.cross_prompt_norm);
        out += ',';
        out += io::format_double(rec.cross_traj_norm);
        out += ',';
        out += io::format_double(rec.align_norm);
        out += ',';
        out += io::format_double(rec.id_norm);
        out += '\n';
    }
    return out;
}

std::string manifest_json(const EditConfig& cfg) {
    ordered_json m;
    m["toolkit"] = kToolkitName;
    m["version"] = kToolkitVersion;
    m["log_columns"] = {"iter",           "t",
                        "estimator",      "grad_norm",
                        "mse_to_source",  "cross_prompt_norm",
                        "cross_traj_norm", "align_norm",
                        "id_norm"};
    m["config"] = ordered_json::parse(edit_config_to_json(cfg));
    return m.dump(2) + "\n";
}

std::vector<std::pair<std::string, double>> compute_metrics(const EditConfig& cfg,
                                                            const EditOutcome& outcome) {
    std::vector<std::pair<std::string, double>> rows;
    std::unique_ptr<metrics::PixelSpaceEmbedder> embedder;
    auto ensure_embedder = [&]() -> metrics::Embedder& {
        if (!embedder) {
            std::map<std::string, ArrayXd> vectors;
            for (const auto& [id, spec] : cfg.backend.prompts) {
                vectors.emplace(id, spec.mixture.weighted_mean());
            }
            embedder = std::make_unique<metrics::PixelSpaceEmbedder>(std::move(vectors));
        }
        return *embedder;
    };

    for (const auto& metric : cfg.metrics) {
        if (metric == "mse") {
            rows.emplace_back("mse", metrics::mse(outcome.final_image, cfg.source_image));
        } else if (metric == "region_mse") {
            for (const auto& [name, idx] : cfg.regions) {
                rows.emplace_back("mse_region_" + name,
                                  metrics::region_mse(outcome.final_image, cfg.source_image, idx));
            }
        } else if (metric == "clip_sim") {
            rows.emplace_back("clip_sim", metrics::clip_similarity(outcome.final_image,
                                                                   cfg.target_prompt,
                                                                   ensure_embedder()));
        } else if (metric == "dir_sim") {
            rows.emplace_back(
                "dir_sim", metrics::directional_similarity(cfg.source_image, outcome.final_image,
                                                           cfg.source_prompt, cfg.target_prompt,
                                                           ensure_embedder()));
        }
    }
    return rows;
}

std::string metrics_to_csv(const std::string& run_id,
                           const std::vector<std::pair<std::string, double>>& rows) {
    std::string out = "run_id,metric_name,value\n";
    for (const auto& [name, value] : rows) {
        out += run_id;
        out += ',';
        out += name;
        out += ',';
        out += io::format_double(value);
        out += '\n';
    }
    return out;
}

struct RunResult {
    int exit_code = kExitOk;
    EditOutcome outcome;
    std::vector<std::pair<std::string, double>> metric_rows;
    std::string error;
};

RunResult execute_and_write(const EditConfig& cfg, const fs::path& dir) {
    RunResult result;
    io::atomic_write(dir / "manifest.json", manifest_json(cfg));

    result.outcome = run_edit(cfg);
    io::atomic_write(dir / "log.csv", log_to_csv(result.outcome.log));

    if (result.outcome.status == EditOutcome::Status::aborted) {
        result.exit_code = kExitRuntime;
        result.error = result.outcome.abort_reason;
        io::atomic_write(dir / "error.txt", result.outcome.abort_reason + "\n");
        return result;
    }

    io::atomic_write(dir / "final.npy", io::encode_npy(result.outcome.final_image, cfg.image_shape));
    if (cfg.image_shape) {
        const auto gray = io::quantize_gray(result.outcome.final_image, cfg.png_vmin, cfg.png_vmax);
        io::atomic_write(dir / "final.png",
                         io::encode_gray_png(gray, cfg.image_shape->second, cfg.image_shape->first));
    }

    try {
        result.metric_rows = compute_metrics(cfg, result.outcome);
    } catch (const std::exception& e) {
        result.exit_code = kExitRuntime;
        result.error = std::string("metric evaluation failed: ") + e.what();
        io::atomic_write(dir / "error.txt", result.error + "\n");
        return result;
    }
    io::atomic_write(dir / "metrics.csv", metrics_to_csv(cfg.run_id, result.metric_rows));
    return result;
}

ordered_json* json_at_path(ordered_json& root, const std::string& dotted) {
    ordered_json* node = &root;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->is_object() || !node->contains(part)) {
            return nullptr;
        }
        node = &(*node)[part];
    }
    return node;
}

bool erase_path(ordered_json& root, const std::string& dotted) {
    const auto last_dot = dotted.rfind('.');
    if (last_dot == std::string::npos) {
        return root.is_object() && root.erase(dotted) > 0;
    }
    ordered_json* parent = json_at_path(root, dotted.substr(0, last_dot));
    if (!parent || !parent->is_object()) {
        return false;
    }
    return parent->erase(dotted.substr(last_dot + 1)) > 0;
}

std::string sweep_value_string(const ordered_json& v) {
    std::string s = v.is_string() ? v.get<std::string>() : v.dump();
    if (s.find_first_of(",\"\n") != std::string::npos) {
        std::string quoted = "\"";
        for (char c : s) {
            if (c == '"') {
                quoted += '"';
            }
            quoted += c;
        }
        quoted += '"';
        return quoted;
    }
    return s;
}

}  // namespace

namespace {

// Reads a config document, unwrapping run manifests to their config echo.
ordered_json load_config_document(const fs::path& path) {
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const std::exception& e) {
        throw std::invalid_argument(e.what());
    }
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(path.string() + " is not valid JSON: " + e.what());
    }
    if (j.is_object() && j.contains("config")) {
        return j["config"];
    }
    return j;
}

void apply_overrides(ordered_json& doc, const std::vector<std::string>& overrides) {
    for (const auto& entry : overrides) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw std::invalid_argument("override must look like dotted.key=value: " + entry);
        }
        std::string pointer = "/" + entry.substr(0, eq);
        for (char& c : pointer) {
            if (c == '.') {
                c = '/';
            }
        }
        const std::string raw = entry.substr(eq + 1);
        ordered_json value;
        try {
            value = ordered_json::parse(raw);
        } catch (const nlohmann::json::parse_error&) {
            value = raw;  // bare strings are taken literally
        }
        doc[ordered_json::json_pointer(pointer)] = value;
    }
}

}  // namespace

EditConfig load_config_file(const fs::path& path) {
    return parse_edit_config(load_config_document(path).dump());
}

fs::path output_root() {
    if (const char* env = std::getenv("SDISTILL_OUTPUT_ROOT")) {
        if (env[0] != '\0') {
            return fs::path(env);
        }
    }
    return fs::path("runs");
}

int cmd_edit(const fs::path& input, const std::optional<fs::path>& out_dir,
             const std::vector<std::string>& overrides) {
    EditConfig cfg;
    try {
        ordered_json doc = load_config_document(input);
        apply_overrides(doc, overrides);
        cfg = parse_edit_config(doc.dump());
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    const fs::path dir = out_dir ? *out_dir : output_root() / cfg.run_id;
    RunResult result;
    try {
        result = execute_and_write(cfg, dir);
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }

    if (result.exit_code != kExitOk) {
        std::cerr << "run " << cfg.run_id << " aborted: " << result.error << "\n";
        std::cerr << "partial log: " << (dir / "log.csv").string() << "\n";
        return result.exit_code;
    }
    std::cout << "run " << cfg.run_id << ": ok after " << result.outcome.log.size()
              << " iterations -> " << dir.string() << "\n";
    for (const auto& [name, value] : result.metric_rows) {
        std::cout << "  " << name << " = " << io::format_double(value) << "\n";
    }
    return kExitOk;
}

int cmd_compare(const std::vector<fs::path>& inputs, const std::vector<std::string>& sweep_keys,
                const std::optional<fs::path>& out_dir, bool grid_plot) {
    if (inputs.size() < 2) {
        std::cerr << "usage error: compare needs at least two configs\n";
        return kExitConfig;
    }
    if (sweep_keys.empty()) {
        std::cerr << "usage error: compare needs at least one --sweep key\n";
        return kExitConfig;
    }

    std::vector<EditConfig> configs;
    for (const auto& path : inputs) {
        try {
            configs.push_back(load_config_file(path));
        } catch (const std::invalid_argument& e) {
            std::cerr << "config error in " << path.string() << ": " << e.what() << "\n";
            return kExitConfig;
        }
    }

    std::set<std::string> ids;
    for (const auto& cfg : configs) {
        if (!ids.insert(cfg.run_id).second) {
            std::cerr << "config error: duplicate run_id '" << cfg.run_id << "'\n";
            return kExitConfig;
        }
    }

    // Configs must agree everywhere except at the declared sweep keys.
    std::vector<ordered_json> canon;
    std::vector<std::vector<std::string>> sweep_values(configs.size());
    for (std::size_t i = 0; i < configs.size(); ++i) {
        ordered_json j = ordered_json::parse(edit_config_to_json(configs[i]));
        for (const auto& key : sweep_keys) {
            ordered_json* v = json_at_path(j, key);
            if (!v) {
                std::cerr << "config error: sweep key '" << key << "' missing in "
                          << configs[i].run_id << "\n";
                return kExitConfig;
            }
            sweep_values[i].push_back(sweep_value_string(*v));
        }
        ordered_json stripped = j;
        stripped.erase("run_id");
        for (const auto& key : sweep_keys) {
            erase_path(stripped, key);
        }
        canon.push_back(std::move(stripped));
    }
    for (std::size_t i = 1; i < canon.size(); ++i) {
        if (canon[i] != canon[0]) {
            std::cerr << "config error: configs differ outside the declared sweep keys ("
                      << configs[i].run_id << " vs " << configs[0].run_id << ")\n";
            return kExitConfig;
        }
    }

    const fs::path dir = out_dir ? *out_dir : output_root() / "compare";
    std::vector<RunResult> results;
    results.reserve(configs.size());
    int failures = 0;
    for (const auto& cfg : configs) {
        RunResult r;
        try {
            r = execute_and_write(cfg, dir / cfg.run_id);
        } catch (const std::exception& e) {
            r.exit_code = kExitRuntime;
            r.error = e.what();
        }
        if (r.exit_code != kExitOk) {
            ++failures;
            std::cerr << "run " << cfg.run_id << " failed: " << r.error << "\n";
        }
        results.push_back(std::move(r));
    }

    // Combined CSV: one row per successful run, keyed by the sweep values.
    std::set<std::string> metric_names;
    for (const auto& r : results) {
        for (const auto& [name, value] : r.metric_rows) {
            metric_names.insert(name);
        }
    }
    std::string csv = "run_id";
    for (const auto& key : sweep_keys) {
        csv += ',' + key;
    }
    csv += ",status";
    for (const auto& name : metric_names) {
        csv += ',' + name;
    }
    csv += '\n';
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (results[i].exit_code != kExitOk) {
            continue;
        }
        csv += configs[i].run_id;
        for (const auto& v : sweep_values[i]) {
            csv += ',' + v;
        }
        csv += ",ok";
        for (const auto& name : metric_names) {
            csv += ',';
            for (const auto& [mname, mvalue] : results[i].metric_rows) {
                if (mname == name) {
                    csv += io::format_double(mvalue);
                    break;
                }
            }
        }
        csv += '\n';
    }
    io::atomic_write(dir / "combined.csv", csv);

    ordered_json report;
    report["toolkit"] = kToolkitName;
    report["version"] = kToolkitVersion;
    report["sweep_keys"] = sweep_keys;
    report["failed"] = failures;
    report["runs"] = ordered_json::array();
    for (std::size_t i = 0; i < configs.size(); ++i) {
        ordered_json rj;
        rj["run_id"] = configs[i].run_id;
        rj["status"] = results[i].exit_code == kExitOk ? "ok" : "failed";
        if (results[i].exit_code != kExitOk) {
            rj["error"] = results[i].error;
        }
        report["runs"].push_back(std::move(rj));
    }
    io::atomic_write(dir / "compare_report.json", report.dump(2) + "\n");

    if (grid_plot) {
        // Rows follow the first sweep key, columns the second (or the run
        // index when only one key is swept).
        std::vector<std::string> row_vals;
        std::vector<std::string> col_vals;
        auto index_of = [](std::vector<std::string>& vals, const std::string& v) {
            auto it = std::find(vals.begin(), vals.end(), v);
            if (it == vals.end()) {
                vals.push_back(v);
                return static_cast<int>(vals.size()) - 1;
            }
            return static_cast<int>(it - vals.begin());
        };
        std::vector<std::pair<int, int>> cell_pos(configs.size());
        for (std::size_t i = 0; i < configs.size(); ++i) {
            if (sweep_keys.size() >= 2) {
                cell_pos[i] = {index_of(row_vals, sweep_values[i][0]),
                               index_of(col_vals, sweep_values[i][1])};
            } else {
                // one swept key: a single row, one column per run
                cell_pos[i] = {0, static_cast<int>(i)};
            }
        }
        const int grid_rows = sweep_keys.size() >= 2 ? static_cast<int>(row_vals.size()) : 1;
        const int grid_cols = sweep_keys.size() >= 2
                                  ? std::max(static_cast<int>(col_vals.size()), 1)
                                  : static_cast<int>(configs.size());

        std::vector<io::GridCell> cells(static_cast<std::size_t>(grid_rows) * grid_cols);
        for (auto& cell : cells) {
            cell.image = ArrayXd::Zero(1);
        }
        for (std::size_t i = 0; i < configs.size(); ++i) {
            io::GridCell cell;
            cell.image = results[i].outcome.final_image.size() > 0
                             ? results[i].outcome.final_image
                             : ArrayXd::Zero(configs[i].source_image.size());
            if (configs[i].image_shape) {
                cell.rows = configs[i].image_shape->first;
                cell.cols = configs[i].image_shape->second;
            } else {
                cell.rows = 1;
                cell.cols = static_cast<int>(cell.image.size());
            }
            cells[static_cast<std::size_t>(cell_pos[i].first) * grid_cols + cell_pos[i].second] =
                std::move(cell);
        }
        io::atomic_write(dir / "grid.png",
                         io::encode_grid_png(cells, grid_rows, grid_cols, configs[0].png_vmin,
                                             configs[0].png_vmax));
    }

    std::cout << "compare: " << configs.size() - static_cast<std::size_t>(failures) << "/"
              << configs.size() << " runs ok -> " << dir.string() << "\n";
    return failures == 0 ? kExitOk : kExitRuntime;
}

int cmd_selftest(std::ostream& os) {
    return run_selftest(os);
}

}  // namespace cli
}  // namespace sdistill
