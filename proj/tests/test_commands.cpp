#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#ifdef SCALEKV_CLI_PATH
#include <sys/wait.h>
#endif

#include "scalekv/commands.hpp"
#include "test_util.hpp"

using testutil::TempDir;

using namespace scalekv;

namespace {

RunConfig command_config() {
    RunConfig config;
    config.model.layers = 4;
    config.model.heads = 2;
    config.model.d_model = 32;
    config.model.vocab = 64;
    config.model.seed = 3;
    config.model.cond_tokens = 4;
    config.schedule_scales = 3;
    config.seeds = {1};
    config.policies = {"full", "snapkv"};
    config.budget_fractions = {0.5};
    config.observation_window = 1;
    config.sink_tokens = 2;
    config.pyramid_slope_frac = 0.2;
    config.calibration.prompt_seeds = {1, 2};
    config.calibration.k_prime = 4;
    config.calibration.n_drafters = 2;
    config.single_run.policy = "full";
    config.single_run.budget_fraction = 1.0;
    config.single_run.capture_snapshots = true;
    return config;
}

int count_lines(const std::string& text) {
    int lines = 0;
    for (char c : text)
        if (c == '\n') ++lines;
    return lines;
}

}  // namespace

TEST_CASE("calibrate writes a reloadable role plan and reruns byte-identically") {
    TempDir dir;
    RunConfig config = command_config();
    std::ostringstream log;
    CalibrateOutput first = cmd_calibrate(config, dir.str(), log);
    CHECK(first.plan_path == dir.str() + "/role_plan.json");
    CHECK(std::filesystem::exists(first.plan_path));
    CHECK(log.str().find("drafter pair(s)") != std::string::npos);

    RolePlanFile loaded = load_role_plan(first.plan_path);
    CHECK(loaded.table.num_layers == 4);
    CHECK(loaded.roles.drafters.size() == 2);

    const std::string before = read_text_file(first.plan_path);
    std::ostringstream quiet;
    cmd_calibrate(config, dir.str(), quiet);
    CHECK(read_text_file(first.plan_path) == before);
}

TEST_CASE("bench writes csv, summary and audits that reconcile in a report") {
    TempDir dir;
    RunConfig config = command_config();
    std::ostringstream log;
    BenchOutput bench = cmd_bench(config, dir.str(), log);

    CHECK(std::filesystem::exists(bench.csv_path));
    CHECK(std::filesystem::exists(bench.summary_path));
    std::vector<BenchRow> rows = parse_bench_csv(read_text_file(bench.csv_path), "bench.csv");
    CHECK(rows.size() == 2);  // 2 policies x 1 fraction x 1 seed

    size_t audit_files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(bench.audits_dir))
        if (entry.path().extension() == ".json") ++audit_files;
    CHECK(audit_files == rows.size());

    std::ostringstream report_log;
    ReportOutput report = cmd_report(config, dir.str(), report_log);
    CHECK(report.result.violations.empty());
    CHECK(std::filesystem::exists(report.report_path));
    CHECK(read_text_file(report.report_path).find("Policy sweep report") != std::string::npos);
}

TEST_CASE("bench with scalekv demands a calibrated role plan") {
    TempDir dir;
    RunConfig config = command_config();
    config.policies = {"scalekv"};
    std::ostringstream log;

    config.scalekv.role_plan_path = "";
    CHECK_THROWS_WITH_AS(cmd_bench(config, dir.str(), log), doctest::Contains("calibrate first"),
                         ConfigError);
    config.scalekv.role_plan_path = dir.file("no_such_plan.json");
    CHECK_THROWS_WITH_AS(cmd_bench(config, dir.str(), log), doctest::Contains("calibrate first"),
                         ConfigError);

    cmd_calibrate(config, dir.str(), log);
    config.scalekv.role_plan_path = dir.str() + "/role_plan.json";
    BenchOutput bench = cmd_bench(config, dir.str(), log);
    CHECK(bench.outcome.rows.size() == 1);
    CHECK(bench.outcome.audits.front().plan_scale_totals.size() == 3);
}

TEST_CASE("generate writes a trace and honors the seed override") {
    TempDir dir;
    RunConfig config = command_config();
    std::ostringstream log;
    const uint64_t seed = 42;
    GenerateOutput generated = cmd_generate(config, dir.str(), &seed, log);

    CHECK(generated.trace_dir == dir.str() + "/trace");
    CHECK(std::filesystem::exists(generated.trace_dir + "/r_1.csv"));
    CHECK(std::filesystem::exists(generated.trace_dir + "/r_3.csv"));
    CHECK(std::filesystem::exists(generated.trace_dir + "/snapshots.bin"));

    LoadedTrace loaded = read_trace(generated.trace_dir);
    CHECK(loaded.meta.prompt_seed == 42);
    CHECK(loaded.meta.policy == "full");
    CHECK(loaded.token_maps.size() == 3);
    CHECK(!loaded.snapshots.empty());

    // Without the override the first configured seed drives the run; without
    // snapshot capture the binary stream is omitted.
    RunConfig quiet_config = config;
    quiet_config.single_run.capture_snapshots = false;
    TempDir other;
    cmd_generate(quiet_config, other.str(), nullptr, log);
    LoadedTrace defaulted = read_trace(other.str() + "/trace");
    CHECK(defaulted.meta.prompt_seed == 1);
    CHECK(!std::filesystem::exists(other.str() + "/trace/snapshots.bin"));
}

TEST_CASE("inspect dumps selectivity tables and per-row samples") {
    TempDir dir;
    RunConfig config = command_config();
    std::ostringstream log;
    cmd_generate(config, dir.str(), nullptr, log);
    InspectOutput inspect = cmd_inspect(config, dir.str(), -1, -1, log);

    // 4 layers x 3 scales plus the header.
    CHECK(count_lines(read_text_file(inspect.asi_csv_path)) == 1 + 12);

    // One sample per query row: layers x total map tokens (1 + 4 + 9).
    const std::string samples = read_text_file(inspect.samples_csv_path);
    CHECK(count_lines(samples) == 1 + 4 * 14);
    CHECK(samples.substr(0, 22) == "layer,scale,row,value\n");

    const std::string groups = read_text_file(inspect.groups_csv_path);
    CHECK(groups.substr(0, 12) == "small,large\n");
    // small group pools scales 2..3 (zero-based 1..2): 4 + 9 rows per layer;
    // large pools the last three scales, which is all of them here.
    CHECK(count_lines(groups) == 1 + 4 * 14);

    InspectOutput layer_only = cmd_inspect(config, dir.str(), 2, -1, log);
    CHECK(count_lines(read_text_file(layer_only.samples_csv_path)) == 1 + 14);
    InspectOutput scale_only = cmd_inspect(config, dir.str(), -1, 2, log);
    CHECK(count_lines(read_text_file(scale_only.samples_csv_path)) == 1 + 4 * 4);

    CHECK_THROWS_AS(cmd_inspect(config, dir.str(), 4, -1, log), ConfigError);
    CHECK_THROWS_AS(cmd_inspect(config, dir.str(), -1, 4, log), ConfigError);
}

TEST_CASE("inspect on an unconditioned trace reports unit attention at the first scale") {
    TempDir dir;
    RunConfig config = command_config();
    config.model.cond_tokens = 0;
    std::ostringstream log;
    cmd_generate(config, dir.str(), nullptr, log);
    InspectOutput inspect = cmd_inspect(config, dir.str(), -1, 1, log);

    // Scale 1 is a single token with no history: every sample is exactly 1.
    std::istringstream samples(read_text_file(inspect.samples_csv_path));
    std::string line;
    std::getline(samples, line);  // header
    int count = 0;
    while (std::getline(samples, line)) {
        CHECK(line.substr(line.size() - 2) == ",1");
        ++count;
    }
    CHECK(count == 4);
}

TEST_CASE("inspect demands a full-cache trace with snapshots") {
    TempDir dir;
    RunConfig config = command_config();
    std::ostringstream log;

    CHECK_THROWS_WITH_AS(cmd_inspect(config, dir.str(), -1, -1, log),
                         doctest::Contains("run generate first"), IoError);

    config.single_run.capture_snapshots = false;
    cmd_generate(config, dir.str(), nullptr, log);
    CHECK_THROWS_WITH_AS(cmd_inspect(config, dir.str(), -1, -1, log),
                         doctest::Contains("capture_snapshots"), IoError);

    TempDir compressed;
    config.single_run.capture_snapshots = true;
    config.single_run.policy = "sliding_window";
    config.single_run.budget_fraction = 0.3;
    cmd_generate(config, compressed.str(), nullptr, log);
    CHECK_THROWS_WITH_AS(cmd_inspect(config, compressed.str(), -1, -1, log),
                         doctest::Contains("full-cache"), InvariantError);
}

TEST_CASE("report demands bench output and throws after writing violations") {
    TempDir dir;
    RunConfig config = command_config();
    std::ostringstream log;
    CHECK_THROWS_WITH_AS(cmd_report(config, dir.str(), log), doctest::Contains("run bench first"),
                         ConfigError);

    cmd_bench(config, dir.str(), log);

    // Plant an orphaned audit whose byte accounting cannot reconcile.
    BenchAudit bad;
    bad.policy = "pyramid";
    bad.budget_fraction = 0.25;
    bad.seed = 9;
    bad.b_uniform = 4;
    bad.token_bytes = 16;
    bad.peak_bytes = 100;
    bad.end_bytes = 99;  // != end_retained * token_bytes
    bad.end_retained = 7;
    save_bench_audit(dir.str() + "/audits/zz_bad.json", bad);

    CHECK_THROWS_AS(cmd_report(config, dir.str(), log), InvariantError);
    const std::string report = read_text_file(dir.str() + "/report.md");
    CHECK(report.find("byte accounting broken") != std::string::npos);
}

#ifdef SCALEKV_CLI_PATH
TEST_CASE("the CLI maps error classes onto exit codes") {
    TempDir dir;
    const std::string cli = SCALEKV_CLI_PATH;
    const std::string null_sink = " > /dev/null 2>&1";
    auto run = [&](const std::string& args) {
        int status = std::system((cli + " " + args + null_sink).c_str());
        REQUIRE(status != -1);
        return WEXITSTATUS(status);
    };

    CHECK(run("--help") == 0);
    CHECK(run("") == 1);                                   // missing subcommand
    CHECK(run("bench") == 1);                              // missing --config
    CHECK(run("bench --config " + dir.file("nope.json")) == 1);

    const std::string config_path = dir.file("run.json");
    std::ofstream(config_path) << R"({
      "model": {"layers": 4, "heads": 2, "d_model": 32, "vocab": 64, "seed": 3, "cond_tokens": 4},
      "schedule": {"preset": "square-linear", "K": 3},
      "seeds": [1],
      "policies": ["full", "snapkv"],
      "budget_fractions": [0.5],
      "calibration": {"prompt_seeds": [1, 2], "k_prime": 4, "n_drafters": 2},
      "output_dir": ")" << dir.str() << R"(/out"
    })";

    CHECK(run("bench --config " + config_path) == 0);
    CHECK(run("report --config " + config_path) == 0);
    CHECK(run("generate --config " + config_path + " --seed 7") == 0);
    CHECK(run("inspect --config " + config_path) == 0);

    // A planted broken audit turns report into exit code 2.
    BenchAudit bad;
    bad.policy = "snapkv";
    bad.budget_fraction = 0.5;
    bad.seed = 1;
    bad.b_uniform = 9;
    bad.token_bytes = 256;
    bad.peak_bytes = 1;  // disagrees with the CSV row
    bad.end_bytes = 256;
    bad.end_retained = 1;
    save_bench_audit(dir.str() + "/out/audits/zz_bad.json", bad);
    CHECK(run("report --config " + config_path) == 2);
}
#endif
