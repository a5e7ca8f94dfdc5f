#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scalekv/attention_analysis.hpp"
#include "scalekv/budget_allocator.hpp"
#include "scalekv/model.hpp"

namespace scalekv {

// All on-disk formats live here. Scale indices are one-based in every file
// (r_1.csv is the first map); in-memory indices stay zero-based and the
// conversion happens only at this boundary.

void ensure_dir(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// --- calibration artifacts -------------------------------------------------

struct RolePlanFile {
    AsiTable table;
    RolePlan roles;
};

void save_role_plan(const std::string& path, const AsiTable& table, const RolePlan& roles);
RolePlanFile load_role_plan(const std::string& path);

void save_budget_plan(const std::string& path, const BudgetPlan& plan);
BudgetPlan load_budget_plan(const std::string& path);

// --- generation traces -----------------------------------------------------

struct TraceMeta {
    ModelConfig model;
    std::vector<std::pair<int, int>> schedule_dims;
    std::string policy = "full";
    double budget_fraction = 1.0;
    uint64_t prompt_seed = 0;
    uint64_t weight_checksum = 0;
};

// Writes r_<k>.csv per token map, snapshots.bin (when snapshots were
// captured) and stats.json into `dir`.
void write_trace(const std::string& dir, const TraceMeta& meta, const GenerationTrace& trace);

struct LoadedTrace {
    TraceMeta meta;
    std::vector<TokenMap> token_maps;
    std::vector<AttentionSnapshot> snapshots;
    std::vector<ScaleCacheStats> cache_stats;
    std::vector<CompressResult> compress_audit;
    int64_t peak_bytes = 0;
    int64_t end_bytes = 0;
    int64_t end_retained = 0;
    double wall_ms = 0.0;
};

LoadedTrace read_trace(const std::string& dir);

// Raw snapshot stream: per record five little-endian int32 fields
// (layer, scale, head, rows, cols) followed by rows*cols float32 weights.
void write_snapshots(const std::string& path, const std::vector<AttentionSnapshot>& snapshots);
std::vector<AttentionSnapshot> read_snapshots(const std::string& path);

TokenMap read_token_map_csv(const std::string& path);

// --- bench audits ------------------------------------------------------------

// Byte-exact accounting for one bench run, reconciled by the report command.
struct BenchAudit {
    std::string policy;
    double budget_fraction = 1.0;
    uint64_t seed = 0;
    int64_t b_uniform = 0;
    int64_t token_bytes = 0;
    int64_t peak_bytes = 0;
    int64_t end_bytes = 0;
    int64_t end_retained = 0;
    std::vector<int64_t> plan_scale_totals;  // empty for plan-free policies
    std::vector<CompressResult> boundaries;
};

void save_bench_audit(const std::string& path, const BenchAudit& audit);
BenchAudit load_bench_audit(const std::string& path);

}  // namespace scalekv
