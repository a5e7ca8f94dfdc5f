#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scalekv/budget_allocator.hpp"
#include "scalekv/matrix.hpp"
#include "scalekv/scale_geometry.hpp"

namespace scalekv {

enum class PolicyKind { Full, SlidingWindow, Streaming, SnapKv, Pyramid, ScaleKv };

// Eviction policy applied once per scale boundary. Baselines (sliding /
// streaming) keep positional slices; snapkv / pyramid / scalekv score
// candidates from the observation window of the just-finished scale and
// keep the top tokens per layer, window tokens on top of the budget.
struct PolicyConfig {
    PolicyKind kind = PolicyKind::Full;

    int64_t window_tokens = 0;  // sliding_window
    int64_t sink_tokens = 0;    // streaming
    int64_t recent_tokens = 0;  // streaming
    int64_t budget = 0;         // snapkv uniform history budget

    int observation_window = 16;                         // patch count N
    std::optional<std::pair<int, int>> window_grid;      // explicit (rows, cols) patch grid
    BudgetPlan budget_plan;                              // pyramid / scalekv
    RolePlan role_plan;                                  // roles behind the scalekv plan

    int bytes_per_element = 4;

    static PolicyConfig full();
    static PolicyConfig sliding_window(int64_t w);
    static PolicyConfig streaming(int64_t sinks, int64_t recent);
    static PolicyConfig snapkv(int64_t budget, int observation_window);
    static PolicyConfig pyramid(BudgetPlan plan, int observation_window);
    static PolicyConfig scalekv(RolePlan roles, BudgetPlan plan, int observation_window);

    bool uses_observation_window() const {
        return kind == PolicyKind::SnapKv || kind == PolicyKind::Pyramid || kind == PolicyKind::ScaleKv;
    }
    std::string kind_name() const;

    // Rejects parameter combinations generate() cannot honor, e.g. a budget
    // below the minimum retainable set (the observation window).
    void validate(const ScaleSchedule& schedule) const;
};

PolicyKind policy_kind_from_name(const std::string& name);

// Per-layer retained key/value states, ascending by absolute token index.
// Keys/values are packed [tokens x (heads * head_dim)] float32; the
// bytes_per_element knob only models the accounted storage width.
class KvCache {
  public:
    KvCache(int num_layers, int heads, int head_dim, int bytes_per_element = 4);

    int num_layers() const { return static_cast<int>(layers_.size()); }
    int heads() const { return heads_; }
    int head_dim() const { return head_dim_; }
    int bytes_per_element() const { return bytes_per_element_; }

    void append(int layer, int64_t first_index, const Matrix& keys, const Matrix& values);
    void retain(int layer, const std::vector<int64_t>& keep_sorted);

    const std::vector<int64_t>& indices(int layer) const { return at(layer).indices; }
    const Matrix& keys(int layer) const { return at(layer).keys; }
    const Matrix& values(int layer) const { return at(layer).values; }
    int64_t retained(int layer) const { return static_cast<int64_t>(at(layer).indices.size()); }
    int64_t total_retained() const;

    int next_scale() const { return next_scale_; }
    void advance_scale() { ++next_scale_; }

    // Window tokens of the last finished scale (empty for baselines).
    const std::vector<int64_t>& last_window() const { return last_window_; }
    void set_last_window(std::vector<int64_t> window) { last_window_ = std::move(window); }

  private:
    struct LayerKv {
        std::vector<int64_t> indices;
        Matrix keys;
        Matrix values;
    };

    LayerKv& at(int layer);
    const LayerKv& at(int layer) const;

    std::vector<LayerKv> layers_;
    int heads_ = 0;
    int head_dim_ = 0;
    int bytes_per_element_ = 4;
    int next_scale_ = 0;
    std::vector<int64_t> last_window_;
};

// Accounted bytes: retained tokens x 2 (K and V) x heads x head_dim x width.
int64_t cache_bytes(const KvCache& cache);
int64_t token_bytes(int heads, int head_dim, int bytes_per_element);

// Patch grid (rows, cols) for `patches` patches on a rows x cols map.
std::pair<int, int> window_grid(int rows, int cols, int patches);

// Flat local indices (row-major) of the centroid token of each patch,
// sorted ascending. patches must not exceed rows * cols.
std::vector<int64_t> observation_window(int rows, int cols, int patches);

// Head-mean attention mass each candidate receives from the window queries.
// window_queries: [window x (heads * head_dim)]; candidate_keys likewise.
// Softmax per head over the candidate axis, identical to the forward pass.
std::vector<double> importance_scores(const Matrix& window_queries, const Matrix& candidate_keys,
                                      int heads, int head_dim);

// Top-`budget` candidates by score (ties keep the lower index) plus all
// window tokens, as a sorted unique index list. budget >= candidate count
// keeps everything.
std::vector<int64_t> select_retained(const std::vector<double>& scores,
                                     const std::vector<int64_t>& candidate_indices, int64_t budget,
                                     const std::vector<int64_t>& window_indices);

struct LayerCompressStats {
    int layer = 0;
    int64_t candidates = 0;
    int64_t retained = 0;
    int64_t history_retained = 0;  // retained minus protected window tokens
    int64_t bound = 0;             // effective budget this compression honored
};

struct CompressResult {
    int scale = 0;  // finished scale, zero-based
    std::vector<LayerCompressStats> layers;
    int64_t bytes_after = 0;
};

// Scored compression for snapkv / pyramid / scalekv at the end of
// `finished_scale`. Candidates are everything in the cache (retained history
// plus the just-appended scale); budgets come from the policy's plan column
// for the next scale (the last column again after the final scale).
CompressResult end_of_scale_compress(KvCache& cache, const PolicyConfig& policy,
                                     const ScaleSchedule& schedule, int finished_scale,
                                     int64_t cond_tokens, int64_t scale_base_index,
                                     const std::vector<int64_t>& window_local,
                                     const std::vector<Matrix>& window_queries);

// Positional baselines (full keeps everything, sliding keeps the last w,
// streaming keeps the first sinks + last recent).
CompressResult apply_baseline(KvCache& cache, const PolicyConfig& policy, int finished_scale);

}  // namespace scalekv
