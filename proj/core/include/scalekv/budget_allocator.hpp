#pragma once

#include <cstdint>
#include <vector>

#include "scalekv/attention_analysis.hpp"
#include "scalekv/scale_geometry.hpp"

namespace scalekv {

// Integer history budgets per (layer, scale). Whatever the shaping policy,
// every plan conserves the uniform total exactly: for each scale k,
// sum_l budget(l, k) == b_uniform * num_layers. All budgets respect
// min_budget (the observation window floor, so eviction always leaves a
// scorable retained set).
struct BudgetPlan {
    int num_layers = 0;
    int num_scales = 0;
    int64_t b_uniform = 0;
    int64_t refiner_base = 0;  // refiner budget at the first scale
    int64_t decay = 0;         // per-scale refiner decrement
    int64_t min_budget = 0;
    std::vector<int64_t> budgets;      // [num_layers * num_scales]
    std::vector<int> drafter_count;    // per scale
    std::vector<int> refiner_count;    // per scale

    int64_t budget(int layer, int scale) const { return budgets[index(layer, scale)]; }

    size_t index(int layer, int scale) const {
        if (layer < 0 || layer >= num_layers || scale < 0 || scale >= num_scales)
            throw IndexError("budget plan index out of range");
        return static_cast<size_t>(layer) * num_scales + scale;
    }

    int64_t scale_total(int scale) const {
        int64_t total = 0;
        for (int l = 0; l < num_layers; ++l) total += budget(l, scale);
        return total;
    }
};

// Every (layer, scale) gets b_uniform.
BudgetPlan uniform_plan(int64_t b_uniform, int num_layers, int num_scales, int64_t min_budget);

// Role-aware plan: refiners at scale k (zero-based) keep
// max(min_budget, refiner_base - decay * k) tokens; the per-scale surplus
// relative to the uniform total is split equally among that scale's
// drafters, remainder one token each in ascending z-score order. Scales
// without drafters hand the surplus back to their refiners the same way.
// Budgets are capped at the retainable history (prefix tokens plus
// prefix_extra conditioning tokens), freed tokens returning to the same
// scale's uncapped layers until a fixpoint; if every layer is capped the
// leftover is spread anyway so conservation stays exact.
BudgetPlan scalekv_plan(const RolePlan& roles, int64_t b_uniform, int64_t refiner_base, int64_t decay,
                        int64_t min_budget, const ScaleSchedule& schedule, int64_t prefix_extra = 0);

// Depth-shaped plan: budgets fall linearly with layer index, identical
// across scales, integerized to exact per-scale conservation (remainder
// tokens go to the shallowest layers).
BudgetPlan pyramid_plan(int64_t b_uniform, int num_layers, int num_scales, int64_t min_budget,
                        double slope);

// Tokens actually retainable at `scale`: the plan budget clipped to the
// history that exists there.
int64_t effective_budget(const BudgetPlan& plan, int layer, int scale, const ScaleSchedule& schedule,
                         int64_t prefix_extra = 0);

}  // namespace scalekv
