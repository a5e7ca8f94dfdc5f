#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scalekv/run_config.hpp"
#include "scalekv/trace_io.hpp"

namespace scalekv {

inline constexpr int kBenchCsvSchemaVersion = 1;
inline constexpr const char* kBenchCsvHeader =
    "policy,budget_fraction,seed,logit_mse,token_agreement,mean_kl,peak_bytes,retained_tokens,wall_ms";

// One sweep cell: a policy at a budget fraction on one prompt seed, measured
// against the full-cache run of the same seed.
struct BenchRow {
    std::string policy;
    double budget_fraction = 1.0;
    uint64_t seed = 0;
    double logit_mse = 0.0;
    double token_agreement = 1.0;
    double mean_kl = 0.0;
    int64_t peak_bytes = 0;
    int64_t retained_tokens = 0;
    double wall_ms = 0.0;
};

std::string format_bench_row(const BenchRow& row);

// Parses a CSV document (header included). IoError messages carry the source
// name and one-based line number.
std::vector<BenchRow> parse_bench_csv(const std::string& text, const std::string& source_name);

// Full per-layer history at the end of a run: conditioning plus every scale.
int64_t full_history_tokens(const ModelConfig& model, const ScaleSchedule& schedule);

int64_t derive_b_uniform(double fraction, int64_t h_full);

// Maps a policy name and budget fraction onto concrete policy parameters.
// Budgets at or above the full history collapse every policy to full
// retention, so the 100% column is exactly the no-eviction run. scalekv
// needs `roles`; other policies ignore it.
struct PolicyDerivation {
    PolicyConfig policy;
    int64_t b_uniform = 0;
};
PolicyDerivation derive_policy(const std::string& name, double fraction, const RunConfig& config,
                               const ScaleSchedule& schedule, const RolePlanFile* roles);

struct BenchMetrics {
    double logit_mse = 0.0;
    double token_agreement = 1.0;
    double mean_kl = 0.0;
};

// Divergence of a policy run from the full-cache run of the same seed. Both
// traces must carry per-scale logits.
BenchMetrics divergence_metrics(const GenerationTrace& full_trace, const GenerationTrace& policy_trace);

struct BenchOutcome {
    std::vector<BenchRow> rows;
    std::vector<BenchAudit> audits;
    std::string csv;
    std::string summary_json;
};

// Runs the whole (policy x budget x seed) grid. Throws InvariantError if any
// compression step exceeded its budget bound — compliance is checked on
// every run, not only in the report.
BenchOutcome run_bench(const Model& model, const ScaleSchedule& schedule, const RunConfig& config,
                       const RolePlanFile* roles);

}  // namespace scalekv
