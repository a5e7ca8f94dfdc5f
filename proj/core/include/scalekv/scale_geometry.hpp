#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scalekv/errors.hpp"

namespace scalekv {

// Geometry of a coarse-to-fine token map sequence. Scale s (zero-based
// internally; serialized and reported one-based) is an h x w grid of tokens,
// generated in parallel after all coarser scales. Token counts are
// non-decreasing from one scale to the next.
//
// The square-linear preset uses h = w = s + 1, so a K-scale run has
// 1 + 4 + 9 + ... + K^2 tokens. Production-sized schedules (final maps up to
// 64 x 64, 16 scales) stay well inside int64 arithmetic.
struct ScaleSchedule {
    std::vector<std::pair<int, int>> scales;  // (rows, cols), coarse to fine

    int num_scales() const { return static_cast<int>(scales.size()); }

    int rows_at(int scale) const { return scales[check(scale)].first; }
    int cols_at(int scale) const { return scales[check(scale)].second; }
    int64_t tokens_at(int scale) const {
        check(scale);
        return static_cast<int64_t>(scales[scale].first) * scales[scale].second;
    }

    // Tokens in scales strictly before `scale`.
    int64_t prefix_tokens(int scale) const {
        if (scale < 0 || scale > num_scales()) throw IndexError("scale index out of range");
        int64_t total = 0;
        for (int s = 0; s < scale; ++s) total += tokens_at(s);
        return total;
    }

    int64_t total_tokens() const { return prefix_tokens(num_scales()); }

  private:
    int check(int scale) const {
        if (scale < 0 || scale >= num_scales()) throw IndexError("scale index out of range");
        return scale;
    }
};

enum class SchedulePreset { SquareLinear };

ScaleSchedule build_schedule(int num_scales, SchedulePreset preset = SchedulePreset::SquareLinear);

// Custom schedule from an explicit (rows, cols) list. Rejects empty lists,
// non-positive dims, and token counts that shrink between scales.
ScaleSchedule build_schedule(std::vector<std::pair<int, int>> explicit_scales);

// Split of the flat token sequence at one scale: history = all tokens of
// coarser scales (plus `prefix_extra` leading conditioning tokens), current =
// the tokens of this scale. history spans [0, history_len), current spans
// [history_len, history_len + current_len).
struct SequencePartition {
    int scale = 0;
    int64_t history_len = 0;
    int64_t current_len = 0;

    int64_t total_len() const { return history_len + current_len; }
};

SequencePartition partition(const ScaleSchedule& schedule, int scale, int64_t prefix_extra = 0);

}  // namespace scalekv
