#pragma once

#include <cstdint>
#include <vector>

#include "scalekv/attention_analysis.hpp"
#include "scalekv/model.hpp"

namespace scalekv {

struct CalibrationConfig {
    std::vector<uint64_t> prompt_seeds;
    int topk_history = kDefaultTopkHistory;
    int n_drafters = 10;
};

struct CalibrationResult {
    AsiTable table;
    RolePlan roles;
};

// Offline role discovery: runs full-cache generations for every prompt seed,
// averages each (layer, scale) selectivity index over prompts and heads,
// standardizes per scale, and splits drafters from refiners. The first scale
// has no history attention to measure, so its index is pinned to 1 and its
// layers always stay refiners.
CalibrationResult calibrate(const Model& model, const ScaleSchedule& schedule,
                            const CalibrationConfig& config);

}  // namespace scalekv
