#include "scalekv/budget_allocator.hpp"

#include <algorithm>
#include <cmath>

namespace scalekv {

namespace {

void check_common(int64_t b_uniform, int num_layers, int num_scales, int64_t min_budget) {
    if (num_layers < 1 || num_scales < 1) throw ConfigError("plan needs at least one layer and scale");
    if (min_budget < 0) throw ConfigError("min_budget must be non-negative");
    if (b_uniform < min_budget) throw BudgetError("uniform budget below the retention floor");
}

struct ScaleMember {
    int layer = 0;
    double zscore = 0.0;
};

// Layers of one scale in ascending (zscore, layer) order; remainder and
// redistribution tokens always walk this order.
std::vector<ScaleMember> members_at_scale(const RolePlan& roles, int scale, bool drafters) {
    std::vector<ScaleMember> out;
    const auto& src = drafters ? roles.drafters : roles.refiners;
    for (const auto& p : src)
        if (p.scale == scale) out.push_back({p.layer, p.zscore});
    return out;  // source lists are already ascending
}

}  // namespace

BudgetPlan uniform_plan(int64_t b_uniform, int num_layers, int num_scales, int64_t min_budget) {
    check_common(b_uniform, num_layers, num_scales, min_budget);
    BudgetPlan plan;
    plan.num_layers = num_layers;
    plan.num_scales = num_scales;
    plan.b_uniform = b_uniform;
    plan.refiner_base = b_uniform;
    plan.decay = 0;
    plan.min_budget = min_budget;
    plan.budgets.assign(static_cast<size_t>(num_layers) * num_scales, b_uniform);
    plan.drafter_count.assign(static_cast<size_t>(num_scales), 0);
    plan.refiner_count.assign(static_cast<size_t>(num_scales), num_layers);
    return plan;
}

BudgetPlan scalekv_plan(const RolePlan& roles, int64_t b_uniform, int64_t refiner_base, int64_t decay,
                        int64_t min_budget, const ScaleSchedule& schedule, int64_t prefix_extra) {
    const int num_layers = roles.num_layers;
    const int num_scales = roles.num_scales;
    check_common(b_uniform, num_layers, num_scales, min_budget);
    if (schedule.num_scales() != num_scales) throw ShapeError("role plan and schedule disagree on scales");
    if (refiner_base > b_uniform) throw BudgetError("refiner base exceeds the uniform budget");
    if (refiner_base < min_budget) throw BudgetError("refiner base below the retention floor");
    if (decay < 0) throw ConfigError("decay must be non-negative");
    if (prefix_extra < 0) throw ConfigError("prefix_extra must be non-negative");
    if (roles.drafters.size() + roles.refiners.size() !=
        static_cast<size_t>(num_layers) * num_scales)
        throw ShapeError("role plan does not cover every (layer, scale) pair");

    BudgetPlan plan;
    plan.num_layers = num_layers;
    plan.num_scales = num_scales;
    plan.b_uniform = b_uniform;
    plan.refiner_base = refiner_base;
    plan.decay = decay;
    plan.min_budget = min_budget;
    plan.budgets.assign(static_cast<size_t>(num_layers) * num_scales, 0);
    plan.drafter_count.assign(static_cast<size_t>(num_scales), 0);
    plan.refiner_count.assign(static_cast<size_t>(num_scales), 0);

    const int64_t scale_total = b_uniform * num_layers;

    for (int k = 0; k < num_scales; ++k) {
        std::vector<ScaleMember> drafters = members_at_scale(roles, k, true);
        std::vector<ScaleMember> refiners = members_at_scale(roles, k, false);
        plan.drafter_count[static_cast<size_t>(k)] = static_cast<int>(drafters.size());
        plan.refiner_count[static_cast<size_t>(k)] = static_cast<int>(refiners.size());

        // The first scale has no decay step; scale k (zero-based) loses k steps.
        int64_t refiner_budget = std::max<int64_t>(min_budget, refiner_base - decay * k);

        for (const auto& m : refiners) plan.budgets[plan.index(m.layer, k)] = refiner_budget;
        int64_t surplus = scale_total - refiner_budget * static_cast<int64_t>(refiners.size());

        std::vector<ScaleMember>& receivers = drafters.empty() ? refiners : drafters;
        int64_t base_gain = surplus / static_cast<int64_t>(receivers.size());
        int64_t remainder = surplus % static_cast<int64_t>(receivers.size());
        for (size_t i = 0; i < receivers.size(); ++i) {
            int64_t gain = base_gain + (static_cast<int64_t>(i) < remainder ? 1 : 0);
            plan.budgets[plan.index(receivers[i].layer, k)] += gain;
        }

        // Cap at the retainable history, returning freed tokens to the same
        // scale until nothing moves. The floor takes precedence over the cap;
        // if every layer is capped, leftover tokens are still placed so the
        // per-scale conservation identity stays exact.
        const int64_t cap = std::max(min_budget, prefix_extra + schedule.prefix_tokens(k));
        std::vector<ScaleMember> order;
        order.reserve(static_cast<size_t>(num_layers));
        order.insert(order.end(), drafters.begin(), drafters.end());
        order.insert(order.end(), refiners.begin(), refiners.end());
        std::stable_sort(order.begin(), order.end(), [](const ScaleMember& a, const ScaleMember& b) {
            if (a.zscore != b.zscore) return a.zscore < b.zscore;
            return a.layer < b.layer;
        });

        int64_t pool = 0;
        for (const auto& m : order) {
            int64_t& b = plan.budgets[plan.index(m.layer, k)];
            if (b > cap) {
                pool += b - cap;
                b = cap;
            }
        }
        while (pool > 0) {
            std::vector<int> open;
            for (const auto& m : order)
                if (plan.budgets[plan.index(m.layer, k)] < cap) open.push_back(m.layer);
            if (open.empty()) break;
            int64_t share = pool / static_cast<int64_t>(open.size());
            int64_t rem = pool % static_cast<int64_t>(open.size());
            for (size_t i = 0; i < open.size(); ++i) {
                int64_t want = share + (static_cast<int64_t>(i) < rem ? 1 : 0);
                int64_t& b = plan.budgets[plan.index(open[i], k)];
                int64_t granted = std::min(want, cap - b);
                b += granted;
                pool -= granted;
            }
        }
        if (pool > 0) {
            int64_t share = pool / num_layers;
            int64_t rem = pool % num_layers;
            for (size_t i = 0; i < order.size(); ++i) {
                plan.budgets[plan.index(order[i].layer, k)] +=
                    share + (static_cast<int64_t>(i) < rem ? 1 : 0);
            }
        }
    }
    return plan;
}

BudgetPlan pyramid_plan(int64_t b_uniform, int num_layers, int num_scales, int64_t min_budget,
                        double slope) {
    check_common(b_uniform, num_layers, num_scales, min_budget);
    if (slope < 0.0) throw ConfigError("pyramid slope must be non-negative");

    std::vector<int64_t> column(static_cast<size_t>(num_layers));
    double center = (num_layers - 1) / 2.0;
    int64_t assigned = 0;
    for (int l = 0; l < num_layers; ++l) {
        double raw = static_cast<double>(b_uniform) + slope * (center - l);
        column[static_cast<size_t>(l)] = static_cast<int64_t>(std::floor(raw));
        assigned += column[static_cast<size_t>(l)];
    }
    int64_t deficit = b_uniform * num_layers - assigned;
    for (int l = 0; deficit > 0; l = (l + 1) % num_layers, --deficit) column[static_cast<size_t>(l)] += 1;
    for (int l = 0; l < num_layers; ++l)
        if (column[static_cast<size_t>(l)] < min_budget)
            throw BudgetError("pyramid slope pushes a layer below the retention floor");

    BudgetPlan plan;
    plan.num_layers = num_layers;
    plan.num_scales = num_scales;
    plan.b_uniform = b_uniform;
    plan.refiner_base = b_uniform;
    plan.decay = 0;
    plan.min_budget = min_budget;
    plan.budgets.resize(static_cast<size_t>(num_layers) * num_scales);
    plan.drafter_count.assign(static_cast<size_t>(num_scales), 0);
    plan.refiner_count.assign(static_cast<size_t>(num_scales), num_layers);
    for (int l = 0; l < num_layers; ++l)
        for (int k = 0; k < num_scales; ++k) plan.budgets[plan.index(l, k)] = column[static_cast<size_t>(l)];
    return plan;
}

int64_t effective_budget(const BudgetPlan& plan, int layer, int scale, const ScaleSchedule& schedule,
                         int64_t prefix_extra) {
    if (schedule.num_scales() != plan.num_scales) throw ShapeError("plan and schedule disagree on scales");
    if (prefix_extra < 0) throw ConfigError("prefix_extra must be non-negative");
    return std::min(plan.budget(layer, scale), prefix_extra + schedule.prefix_tokens(scale));
}

}  // namespace scalekv
