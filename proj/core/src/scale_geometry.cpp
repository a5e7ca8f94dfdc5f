#include "scalekv/scale_geometry.hpp"

namespace scalekv {

ScaleSchedule build_schedule(int num_scales, SchedulePreset preset) {
    if (num_scales < 1) throw ConfigError("schedule needs at least one scale");
    ScaleSchedule schedule;
    schedule.scales.reserve(static_cast<size_t>(num_scales));
    switch (preset) {
        case SchedulePreset::SquareLinear:
            for (int s = 1; s <= num_scales; ++s) schedule.scales.emplace_back(s, s);
            break;
    }
    return schedule;
}

ScaleSchedule build_schedule(std::vector<std::pair<int, int>> explicit_scales) {
    if (explicit_scales.empty()) throw ConfigError("schedule needs at least one scale");
    int64_t prev = 0;
    for (const auto& [h, w] : explicit_scales) {
        if (h < 1 || w < 1) throw ConfigError("scale dims must be positive");
        int64_t tokens = static_cast<int64_t>(h) * w;
        if (tokens < prev) throw ConfigError("scale token counts must be non-decreasing");
        prev = tokens;
    }
    return ScaleSchedule{std::move(explicit_scales)};
}

SequencePartition partition(const ScaleSchedule& schedule, int scale, int64_t prefix_extra) {
    if (scale < 0 || scale >= schedule.num_scales()) throw IndexError("scale index out of range");
    if (prefix_extra < 0) throw ConfigError("prefix_extra must be non-negative");
    SequencePartition part;
    part.scale = scale;
    part.history_len = prefix_extra + schedule.prefix_tokens(scale);
    part.current_len = schedule.tokens_at(scale);
    return part;
}

}  // namespace scalekv
