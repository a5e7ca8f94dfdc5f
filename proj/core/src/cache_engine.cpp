#include "scalekv/cache_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scalekv {

PolicyConfig PolicyConfig::full() {
    PolicyConfig p;
    p.kind = PolicyKind::Full;
    return p;
}

PolicyConfig PolicyConfig::sliding_window(int64_t w) {
    PolicyConfig p;
    p.kind = PolicyKind::SlidingWindow;
    p.window_tokens = w;
    return p;
}

PolicyConfig PolicyConfig::streaming(int64_t sinks, int64_t recent) {
    PolicyConfig p;
    p.kind = PolicyKind::Streaming;
    p.sink_tokens = sinks;
    p.recent_tokens = recent;
    return p;
}

PolicyConfig PolicyConfig::snapkv(int64_t budget, int observation_window) {
    PolicyConfig p;
    p.kind = PolicyKind::SnapKv;
    p.budget = budget;
    p.observation_window = observation_window;
    return p;
}

PolicyConfig PolicyConfig::pyramid(BudgetPlan plan, int observation_window) {
    PolicyConfig p;
    p.kind = PolicyKind::Pyramid;
    p.budget_plan = std::move(plan);
    p.observation_window = observation_window;
    return p;
}

PolicyConfig PolicyConfig::scalekv(RolePlan roles, BudgetPlan plan, int observation_window) {
    PolicyConfig p;
    p.kind = PolicyKind::ScaleKv;
    p.role_plan = std::move(roles);
    p.budget_plan = std::move(plan);
    p.observation_window = observation_window;
    return p;
}

std::string PolicyConfig::kind_name() const {
    switch (kind) {
        case PolicyKind::Full: return "full";
        case PolicyKind::SlidingWindow: return "sliding_window";
        case PolicyKind::Streaming: return "streaming";
        case PolicyKind::SnapKv: return "snapkv";
        case PolicyKind::Pyramid: return "pyramid";
        case PolicyKind::ScaleKv: return "scalekv";
    }
    return "unknown";
}

PolicyKind policy_kind_from_name(const std::string& name) {
    if (name == "full") return PolicyKind::Full;
    if (name == "sliding_window") return PolicyKind::SlidingWindow;
    if (name == "streaming") return PolicyKind::Streaming;
    if (name == "snapkv") return PolicyKind::SnapKv;
    if (name == "pyramid") return PolicyKind::Pyramid;
    if (name == "scalekv") return PolicyKind::ScaleKv;
    throw ConfigError("unknown policy kind: " + name);
}

void PolicyConfig::validate(const ScaleSchedule& schedule) const {
    if (bytes_per_element != 2 && bytes_per_element != 4)
        throw ConfigError("bytes_per_element must be 2 or 4");
    switch (kind) {
        case PolicyKind::Full:
            return;
        case PolicyKind::SlidingWindow:
            if (window_tokens < 1) throw ConfigError("sliding window must keep at least one token");
            return;
        case PolicyKind::Streaming:
            if (sink_tokens < 0) throw ConfigError("sink count must be non-negative");
            if (recent_tokens < 1) throw ConfigError("streaming must keep at least one recent token");
            return;
        case PolicyKind::SnapKv:
            if (observation_window < 1) throw ConfigError("observation window must be positive");
            if (budget < observation_window)
                throw BudgetError("budget below the minimum retainable set (observation window)");
            break;
        case PolicyKind::Pyramid:
        case PolicyKind::ScaleKv:
            if (observation_window < 1) throw ConfigError("observation window must be positive");
            if (budget_plan.budgets.empty()) throw ConfigError("policy requires a budget plan");
            if (budget_plan.num_scales != schedule.num_scales())
                throw ShapeError("budget plan and schedule disagree on scales");
            if (budget_plan.min_budget < observation_window)
                throw BudgetError("budget below the minimum retainable set (observation window)");
            if (kind == PolicyKind::ScaleKv &&
                (!role_plan.drafters.empty() || !role_plan.refiners.empty())) {
                if (role_plan.num_layers != budget_plan.num_layers ||
                    role_plan.num_scales != budget_plan.num_scales)
                    throw ShapeError("role plan and budget plan disagree on dimensions");
            }
            break;
    }
    if (window_grid) {
        if (window_grid->first < 1 || window_grid->second < 1)
            throw ConfigError("window grid dims must be positive");
        if (static_cast<int64_t>(window_grid->first) * window_grid->second != observation_window)
            throw ConfigError("window grid does not factor the observation window");
    }
}

KvCache::KvCache(int num_layers, int heads, int head_dim, int bytes_per_element)
    : heads_(heads), head_dim_(head_dim), bytes_per_element_(bytes_per_element) {
    if (num_layers < 1 || heads < 1 || head_dim < 1) throw ConfigError("cache dims must be positive");
    if (bytes_per_element != 2 && bytes_per_element != 4)
        throw ConfigError("bytes_per_element must be 2 or 4");
    layers_.resize(static_cast<size_t>(num_layers));
    int width = heads * head_dim;
    for (auto& l : layers_) {
        l.keys = Matrix(0, width);
        l.values = Matrix(0, width);
    }
}

KvCache::LayerKv& KvCache::at(int layer) {
    if (layer < 0 || layer >= num_layers()) throw IndexError("layer index out of range");
    return layers_[static_cast<size_t>(layer)];
}

const KvCache::LayerKv& KvCache::at(int layer) const {
    if (layer < 0 || layer >= num_layers()) throw IndexError("layer index out of range");
    return layers_[static_cast<size_t>(layer)];
}

void KvCache::append(int layer, int64_t first_index, const Matrix& keys, const Matrix& values) {
    LayerKv& l = at(layer);
    int width = heads_ * head_dim_;
    if (keys.cols != width || values.cols != width || keys.rows != values.rows)
        throw ShapeError("key/value states have the wrong width");
    if (!l.indices.empty() && first_index <= l.indices.back())
        throw SequencingError("appended tokens must extend the sequence");
    for (int r = 0; r < keys.rows; ++r) l.indices.push_back(first_index + r);
    l.keys.data.insert(l.keys.data.end(), keys.data.begin(), keys.data.end());
    l.keys.rows += keys.rows;
    l.values.data.insert(l.values.data.end(), values.data.begin(), values.data.end());
    l.values.rows += values.rows;
}

void KvCache::retain(int layer, const std::vector<int64_t>& keep_sorted) {
    LayerKv& l = at(layer);
    int width = heads_ * head_dim_;
    Matrix new_keys(static_cast<int>(keep_sorted.size()), width);
    Matrix new_values(static_cast<int>(keep_sorted.size()), width);
    std::vector<int64_t> new_indices;
    new_indices.reserve(keep_sorted.size());
    size_t src = 0;
    for (size_t i = 0; i < keep_sorted.size(); ++i) {
        if (i > 0 && keep_sorted[i] <= keep_sorted[i - 1])
            throw IndexError("retained indices must be sorted ascending and unique");
        while (src < l.indices.size() && l.indices[src] < keep_sorted[i]) ++src;
        if (src >= l.indices.size() || l.indices[src] != keep_sorted[i])
            throw IndexError("retained index is not present in the cache");
        std::copy_n(l.keys.row(static_cast<int>(src)).data(), width, new_keys.row(static_cast<int>(i)).data());
        std::copy_n(l.values.row(static_cast<int>(src)).data(), width,
                    new_values.row(static_cast<int>(i)).data());
        new_indices.push_back(keep_sorted[i]);
    }
    l.indices = std::move(new_indices);
    l.keys = std::move(new_keys);
    l.values = std::move(new_values);
}

int64_t KvCache::total_retained() const {
    int64_t total = 0;
    for (const auto& l : layers_) total += static_cast<int64_t>(l.indices.size());
    return total;
}

int64_t token_bytes(int heads, int head_dim, int bytes_per_element) {
    return 2ll * heads * head_dim * bytes_per_element;
}

int64_t cache_bytes(const KvCache& cache) {
    return cache.total_retained() * token_bytes(cache.heads(), cache.head_dim(), cache.bytes_per_element());
}

std::pair<int, int> window_grid(int rows, int cols, int patches) {
    if (rows < 1 || cols < 1) throw ConfigError("map dims must be positive");
    if (patches < 1 || static_cast<int64_t>(patches) > static_cast<int64_t>(rows) * cols)
        throw ConfigError("patch count must be in [1, rows * cols]");
    for (int d = static_cast<int>(std::sqrt(static_cast<double>(patches))); d >= 1; --d) {
        if (patches % d != 0) continue;
        int q = patches / d;
        if (d <= rows && q <= cols) return {d, q};
        if (q <= rows && d <= cols) return {q, d};
    }
    throw ConfigError("observation window grid infeasible for this map");
}

std::vector<int64_t> observation_window(int rows, int cols, int patches) {
    auto [grid_rows, grid_cols] = window_grid(rows, cols, patches);
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(patches));
    for (int pr = 0; pr < grid_rows; ++pr) {
        int r_lo = pr * rows / grid_rows;
        int r_hi = (pr + 1) * rows / grid_rows;
        int r = (r_lo + r_hi - 1) / 2;
        for (int pc = 0; pc < grid_cols; ++pc) {
            int c_lo = pc * cols / grid_cols;
            int c_hi = (pc + 1) * cols / grid_cols;
            int c = (c_lo + c_hi - 1) / 2;
            out.push_back(static_cast<int64_t>(r) * cols + c);
        }
    }
    return out;
}

std::vector<double> importance_scores(const Matrix& window_queries, const Matrix& candidate_keys,
                                      int heads, int head_dim) {
    if (window_queries.cols != heads * head_dim || candidate_keys.cols != heads * head_dim)
        throw ShapeError("query/key width does not match heads * head_dim");
    if (window_queries.rows < 1) throw ShapeError("need at least one window query");
    if (candidate_keys.rows < 1) throw ShapeError("need at least one candidate");

    const int n = candidate_keys.rows;
    const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(head_dim));
    std::vector<double> scores(static_cast<size_t>(n), 0.0);
    std::vector<float> logits(static_cast<size_t>(n));

    for (int h = 0; h < heads; ++h) {
        const int off = h * head_dim;
        for (int i = 0; i < window_queries.rows; ++i) {
            const float* q = window_queries.row(i).data() + off;
            float max_logit = -std::numeric_limits<float>::infinity();
            for (int j = 0; j < n; ++j) {
                const float* k = candidate_keys.row(j).data() + off;
                float dot = 0.0f;
                for (int d = 0; d < head_dim; ++d) dot += q[d] * k[d];
                logits[static_cast<size_t>(j)] = dot * inv_sqrt_dk;
                max_logit = std::max(max_logit, logits[static_cast<size_t>(j)]);
            }
            float denom = 0.0f;
            for (int j = 0; j < n; ++j) {
                logits[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - max_logit);
                denom += logits[static_cast<size_t>(j)];
            }
            for (int j = 0; j < n; ++j)
                scores[static_cast<size_t>(j)] += static_cast<double>(logits[static_cast<size_t>(j)] / denom);
        }
    }
    for (auto& s : scores) s /= heads;
    return scores;
}

std::vector<int64_t> select_retained(const std::vector<double>& scores,
                                     const std::vector<int64_t>& candidate_indices, int64_t budget,
                                     const std::vector<int64_t>& window_indices) {
    if (scores.size() != candidate_indices.size())
        throw ShapeError("scores and candidate indices must align");
    if (budget < 0) throw BudgetError("budget must be non-negative");

    const size_t n = scores.size();
    std::vector<int64_t> keep;
    if (budget >= static_cast<int64_t>(n)) {
        keep = candidate_indices;
    } else {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return candidate_indices[a] < candidate_indices[b];
        });
        keep.reserve(static_cast<size_t>(budget) + window_indices.size());
        for (int64_t i = 0; i < budget; ++i) keep.push_back(candidate_indices[order[static_cast<size_t>(i)]]);
    }
    for (int64_t w : window_indices) keep.push_back(w);
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    return keep;
}

namespace {

int64_t plan_budget_for(const PolicyConfig& policy, int layer, int target_scale) {
    if (policy.kind == PolicyKind::SnapKv) return policy.budget;
    return policy.budget_plan.budget(layer, target_scale);
}

}  // namespace

CompressResult end_of_scale_compress(KvCache& cache, const PolicyConfig& policy,
                                     const ScaleSchedule& schedule, int finished_scale,
                                     int64_t cond_tokens, int64_t scale_base_index,
                                     const std::vector<int64_t>& window_local,
                                     const std::vector<Matrix>& window_queries) {
    if (!policy.uses_observation_window())
        throw SequencingError("scored compression requires a window policy");
    if (finished_scale < 0 || finished_scale >= schedule.num_scales())
        throw IndexError("scale index out of range");
    if (static_cast<int>(window_queries.size()) != cache.num_layers())
        throw ShapeError("window queries must cover every layer");

    // Budgets target the scale about to run; after the last scale the final
    // column applies once more for the end-of-run footprint.
    const int requested = finished_scale + 1;
    const int budget_column = std::min(requested, schedule.num_scales() - 1);
    const int64_t history_at_target = cond_tokens + schedule.prefix_tokens(
                                                        std::min(requested, schedule.num_scales()));

    std::vector<int64_t> window_abs;
    window_abs.reserve(window_local.size());
    for (int64_t w : window_local) window_abs.push_back(scale_base_index + w);

    CompressResult result;
    result.scale = finished_scale;
    for (int l = 0; l < cache.num_layers(); ++l) {
        const std::vector<int64_t>& candidates = cache.indices(l);
        const int64_t budget = plan_budget_for(policy, l, budget_column);
        std::vector<double> scores =
            importance_scores(window_queries[static_cast<size_t>(l)], cache.keys(l), cache.heads(),
                              cache.head_dim());
        std::vector<int64_t> keep = select_retained(scores, candidates, budget, window_abs);

        LayerCompressStats stats;
        stats.layer = l;
        stats.candidates = static_cast<int64_t>(candidates.size());
        cache.retain(l, keep);
        stats.retained = cache.retained(l);
        int64_t in_window = 0;
        for (int64_t idx : cache.indices(l))
            if (std::binary_search(window_abs.begin(), window_abs.end(), idx)) ++in_window;
        stats.history_retained = stats.retained - in_window;
        stats.bound = std::min(budget, history_at_target);
        result.layers.push_back(stats);
    }
    cache.set_last_window(window_abs);
    result.bytes_after = cache_bytes(cache);
    return result;
}

CompressResult apply_baseline(KvCache& cache, const PolicyConfig& policy, int finished_scale) {
    CompressResult result;
    result.scale = finished_scale;
    for (int l = 0; l < cache.num_layers(); ++l) {
        const std::vector<int64_t>& present = cache.indices(l);
        const int64_t n = static_cast<int64_t>(present.size());
        std::vector<int64_t> keep;
        int64_t bound = n;
        switch (policy.kind) {
            case PolicyKind::Full:
                keep = present;
                break;
            case PolicyKind::SlidingWindow: {
                bound = policy.window_tokens;
                int64_t start = std::max<int64_t>(0, n - policy.window_tokens);
                keep.assign(present.begin() + static_cast<size_t>(start), present.end());
                break;
            }
            case PolicyKind::Streaming: {
                bound = policy.sink_tokens + policy.recent_tokens;
                int64_t sinks = std::min(policy.sink_tokens, n);
                int64_t recent_start = std::max<int64_t>(sinks, n - policy.recent_tokens);
                keep.assign(present.begin(), present.begin() + static_cast<size_t>(sinks));
                keep.insert(keep.end(), present.begin() + static_cast<size_t>(recent_start), present.end());
                break;
            }
            default:
                throw SequencingError("scored policies use end_of_scale_compress");
        }
        LayerCompressStats stats;
        stats.layer = l;
        stats.candidates = n;
        cache.retain(l, keep);
        stats.retained = cache.retained(l);
        stats.history_retained = stats.retained;
        stats.bound = bound;
        result.layers.push_back(stats);
    }
    cache.set_last_window({});
    result.bytes_after = cache_bytes(cache);
    return result;
}

}  // namespace scalekv
