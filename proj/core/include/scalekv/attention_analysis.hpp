#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scalekv/attention_snapshot.hpp"
#include "scalekv/scale_geometry.hpp"

namespace scalekv {

inline constexpr double kZscoreEpsilon = 1e-8;
inline constexpr int kDefaultTopkHistory = 16;

// Selectivity values per (layer, scale) with their per-scale standardization.
// values[l * num_scales + k] is the mean selectivity index of layer l at
// scale k, averaged over heads (and over prompts when calibrated).
struct AsiTable {
    int num_layers = 0;
    int num_scales = 0;
    int topk_history = kDefaultTopkHistory;
    double epsilon = kZscoreEpsilon;
    std::vector<double> values;
    std::vector<double> zscores;

    double value(int layer, int scale) const { return values[index(layer, scale)]; }
    double zscore(int layer, int scale) const { return zscores[index(layer, scale)]; }

    size_t index(int layer, int scale) const {
        if (layer < 0 || layer >= num_layers || scale < 0 || scale >= num_scales)
            throw IndexError("asi table index out of range");
        return static_cast<size_t>(layer) * num_scales + scale;
    }

    uint64_t digest() const;
};

// One (layer, scale) pair ranked by its standardized selectivity.
struct RankedPair {
    int layer = 0;
    int scale = 0;  // zero-based
    double zscore = 0.0;
};

// Drafter / refiner split of all (layer, scale) pairs. Both lists are sorted
// ascending by (zscore, layer, scale); that order is what the budget
// allocator uses to hand out remainder tokens deterministically.
struct RolePlan {
    int num_layers = 0;
    int num_scales = 0;
    int n_drafters = 0;
    std::vector<RankedPair> drafters;
    std::vector<RankedPair> refiners;
    std::string source_digest;

    bool is_drafter(int layer, int scale) const;
};

// Mean over query rows of the attention mass on the current map.
double current_attention_ratio(const AttentionSnapshot& snapshot, const SequencePartition& part);

// Mean over query rows of the summed top-k attention scores among history
// columns. Rows with fewer than `topk` history columns sum what exists; with
// no history at all the ratio is 1 (vacuously selective).
double history_topk_ratio(const AttentionSnapshot& snapshot, const SequencePartition& part, int topk);

// Product of the two ratios for one head's snapshot.
double attention_selectivity_index(const AttentionSnapshot& snapshot, const SequencePartition& part,
                                   int topk);

// Attention mass per current-map token relative to the mass an average
// token of the whole visible sequence receives, averaged over query rows.
// Uniform attention gives 1; everything-on-current with a half-sequence map
// gives 2; nothing-on-current gives 0.
double normalized_current_attention(const AttentionSnapshot& snapshot, const SequencePartition& part);

// Per-query-row samples of the same statistic (for plotting dumps).
std::vector<double> normalized_current_attention_rows(const AttentionSnapshot& snapshot,
                                                      const SequencePartition& part);

// Fills table.zscores: per scale, z = (v - mean) / (population std + epsilon).
void compute_zscores(AsiTable& table);

// Picks the n_drafters pairs with the smallest z-scores; ties break by
// (lower layer, lower scale). Pairs at scales below `min_drafter_scale`
// are never drafted (calibration passes 1 to keep the first scale refiner).
RolePlan select_drafters(const AsiTable& table, int n_drafters, int min_drafter_scale = 0);

}  // namespace scalekv
