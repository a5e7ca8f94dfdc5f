#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include "scalekv/bench.hpp"
#include "scalekv/calibration.hpp"
#include "scalekv/report.hpp"
#include "scalekv/run_config.hpp"
#include "scalekv/trace_io.hpp"

namespace scalekv {

// Library entry points behind the CLI subcommands. All of them throw:
// ConfigError/IoError mean a bad config or unreadable input (exit 1 at the
// CLI); InvariantError means a violated run-time guarantee (exit 2).

struct CalibrateOutput {
    std::string plan_path;
    CalibrationResult result;
};

// Runs full-cache calibration prompts, writes <out>/role_plan.json and logs
// the drafter count per scale.
CalibrateOutput cmd_calibrate(const RunConfig& config, const std::string& out_dir, std::ostream& log);

struct BenchOutput {
    std::string csv_path;
    std::string summary_path;
    std::string audits_dir;
    BenchOutcome outcome;
};

// Runs the policy sweep, writing <out>/bench.csv, <out>/summary.json and one
// audit JSON per run under <out>/audits/.
BenchOutput cmd_bench(const RunConfig& config, const std::string& out_dir, std::ostream& log);

struct GenerateOutput {
    std::string trace_dir;
    GenerationTrace trace;
};

// Runs one generation under config.single_run and writes the trace
// (token maps, attention snapshots, stats) into <out>/trace/.
GenerateOutput cmd_generate(const RunConfig& config, const std::string& out_dir,
                            const uint64_t* seed_override, std::ostream& log);

struct InspectOutput {
    std::string asi_csv_path;
    std::string samples_csv_path;
    std::string groups_csv_path;
};

// Reads <out>/trace/ and dumps plot-ready attention statistics into
// <out>/inspect/: the per-(layer, scale) selectivity table with z-scores,
// per-row normalized current-attention samples (head-averaged; `layer`
// filters when >= 0, `scale` is one-based and filters when >= 1), and the
// small-vs-large scale-group sample columns.
InspectOutput cmd_inspect(const RunConfig& config, const std::string& out_dir, int layer, int scale,
                          std::ostream& log);

struct ReportOutput {
    std::string report_path;
    ReportResult result;
};

// Merges every *.csv directly under <out> with the audits in <out>/audits/,
// writes <out>/report.md, and throws InvariantError (after writing) when any
// audit check failed.
ReportOutput cmd_report(const RunConfig& config, const std::string& out_dir, std::ostream& log);

}  // namespace scalekv
