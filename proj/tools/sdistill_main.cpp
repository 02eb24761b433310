#include "sdistill/cli_ops.hpp"
#include "sdistill/demo.hpp"
#include "sdistill/version.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int cmd_demo(const std::string& name) {
    using sdistill::Estimator;
    sdistill::EditConfig cfg;
    if (name == "convergence-1d") {
        cfg = sdistill::demo::convergence_1d_config();
    } else if (name == "preserve-dds") {
        cfg = sdistill::demo::preservation_toy_config(Estimator::dds);
    } else if (name == "preserve-ssd") {
        cfg = sdistill::demo::preservation_toy_config(Estimator::ssd);
    } else {
        std::cerr << "unknown demo '" << name
                  << "' (available: convergence-1d, preserve-dds, preserve-ssd)\n";
        return sdistill::cli::kExitConfig;
    }
    std::cout << sdistill::edit_config_to_json(cfg) << "\n";
    return sdistill::cli::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"score-distillation editing toolkit"};
    app.set_version_flag("--version", sdistill::kToolkitVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    auto* edit = app.add_subcommand("edit", "run one editing optimization from a config or manifest");
    edit->add_option("config", config_path, "EditConfig JSON or run manifest")->required();
    edit->add_option("-o,--out", out_dir, "output directory (default: <root>/<run_id>)");
    edit->add_option("--set", overrides,
                     "config override as dotted.key=value, e.g. --set weights.w_e=1.5 (repeatable)");

    std::vector<std::string> compare_paths;
    std::vector<std::string> sweep_keys;
    std::string compare_out;
    bool no_plot = false;
    auto* compare = app.add_subcommand("compare", "run a config sweep and aggregate the results");
    compare->add_option("configs", compare_paths, "two or more configs differing only at --sweep keys")
        ->required();
    compare->add_option("--sweep", sweep_keys, "dotted config key that is allowed to vary (repeatable)");
    compare->add_option("-o,--out", compare_out, "output directory (default: <root>/compare)");
    compare->add_flag("--no-grid-plot", no_plot, "skip the grid plot image");

    auto* selftest = app.add_subcommand("selftest", "run the built-in verification suites");

    std::string demo_name;
    auto* demo = app.add_subcommand("demo", "print a built-in oracle scenario config");
    demo->add_option("name", demo_name, "convergence-1d | preserve-dds | preserve-ssd")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : sdistill::cli::kExitConfig;
    }

    if (edit->parsed()) {
        std::optional<std::filesystem::path> out;
        if (!out_dir.empty()) {
            out = out_dir;
        }
        return sdistill::cli::cmd_edit(config_path, out, overrides);
    }
    if (compare->parsed()) {
        std::vector<std::filesystem::path> paths(compare_paths.begin(), compare_paths.end());
        std::optional<std::filesystem::path> out;
        if (!compare_out.empty()) {
            out = compare_out;
        }
        return sdistill::cli::cmd_compare(paths, sweep_keys, out, !no_plot);
    }
    if (selftest->parsed()) {
        return sdistill::cli::cmd_selftest(std::cout);
    }
    if (demo->parsed()) {
        return cmd_demo(demo_name);
    }
    return sdistill::cli::kExitConfig;
}
