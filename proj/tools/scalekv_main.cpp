#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "scalekv/commands.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool has_seed = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_seed) {
    cmd->add_option("--config", args.config_path, "run configuration JSON")->required();
    cmd->add_option("--out", args.out_dir, "output directory (default: output_dir from the config)");
    if (with_seed)
        cmd->add_option("--seed", args.seed, "override the configured seed(s) with a single value")
            ->each([&args](const std::string&) { args.has_seed = true; });
}

scalekv::RunConfig load(const CommonArgs& args) {
    scalekv::RunConfig config = scalekv::load_run_config(args.config_path);
    if (args.has_seed) {
        config.seeds = {args.seed};
        config.calibration.prompt_seeds = {args.seed};
    }
    return config;
}

std::string out_dir(const CommonArgs& args, const scalekv::RunConfig& config) {
    return args.out_dir.empty() ? config.output_dir : args.out_dir;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"KV-cache compression workbench for next-scale-prediction transformers"};
    app.require_subcommand(1);

    CommonArgs calibrate_args, bench_args, generate_args, inspect_args, report_args;
    int inspect_layer = -1;
    int inspect_scale = -1;

    CLI::App* calibrate = app.add_subcommand(
        "calibrate", "classify (layer, scale) pairs into drafters and refiners, write role_plan.json");
    add_common(calibrate, calibrate_args, true);

    CLI::App* bench = app.add_subcommand(
        "bench", "sweep policies x budgets x seeds against the full-cache oracle, write bench.csv");
    add_common(bench, bench_args, true);

    CLI::App* generate =
        app.add_subcommand("generate", "run one generation and dump its trace (maps, snapshots, stats)");
    add_common(generate, generate_args, true);

    CLI::App* inspect =
        app.add_subcommand("inspect", "dump attention statistics (selectivity tables, sample CSVs)");
    add_common(inspect, inspect_args, false);
    inspect->add_option("--layer", inspect_layer, "restrict samples to one layer (zero-based)");
    inspect->add_option("--scale", inspect_scale, "restrict samples to one scale (one-based)");

    CLI::App* report =
        app.add_subcommand("report", "merge bench CSVs and audits into report.md, verify accounting");
    add_common(report, report_args, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (calibrate->parsed()) {
            scalekv::RunConfig config = load(calibrate_args);
            scalekv::cmd_calibrate(config, out_dir(calibrate_args, config), std::cout);
        } else if (bench->parsed()) {
            scalekv::RunConfig config = load(bench_args);
            scalekv::cmd_bench(config, out_dir(bench_args, config), std::cout);
        } else if (generate->parsed()) {
            scalekv::RunConfig config = load(generate_args);
            const uint64_t* seed = generate_args.has_seed ? &generate_args.seed : nullptr;
            scalekv::cmd_generate(config, out_dir(generate_args, config), seed, std::cout);
        } else if (inspect->parsed()) {
            scalekv::RunConfig config = load(inspect_args);
            scalekv::cmd_inspect(config, out_dir(inspect_args, config), inspect_layer, inspect_scale,
                                 std::cout);
        } else if (report->parsed()) {
            scalekv::RunConfig config = load(report_args);
            scalekv::cmd_report(config, out_dir(report_args, config), std::cout);
        }
    } catch (const scalekv::InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 2;
    } catch (const scalekv::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const scalekv::BudgetError& e) {
        std::cerr << "budget error: " << e.what() << "\n";
        return 1;
    } catch (const scalekv::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
