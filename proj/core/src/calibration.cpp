#include "scalekv/calibration.hpp"

namespace scalekv {

CalibrationResult calibrate(const Model& model, const ScaleSchedule& schedule,
                            const CalibrationConfig& config) {
    if (config.prompt_seeds.empty()) throw ConfigError("calibration needs at least one prompt seed");
    if (config.topk_history < 1) throw ConfigError("topk_history must be positive");

    const int layers = model.config().layers;
    const int scales = schedule.num_scales();
    const int64_t cond = model.config().cond_tokens;

    AsiTable table;
    table.num_layers = layers;
    table.num_scales = scales;
    table.topk_history = config.topk_history;
    table.values.assign(static_cast<size_t>(layers) * scales, 0.0);
    table.zscores.assign(table.values.size(), 0.0);

    GenerateOptions options;
    options.capture_snapshots = true;
    PolicyConfig full = PolicyConfig::full();

    std::vector<int64_t> counts(table.values.size(), 0);
    for (uint64_t seed : config.prompt_seeds) {
        GenerationTrace trace = generate(model, full, schedule, seed, options);
        for (const AttentionSnapshot& snap : trace.snapshots) {
            SequencePartition part = partition(schedule, snap.scale, cond);
            double asi = attention_selectivity_index(snap, part, config.topk_history);
            size_t idx = table.index(snap.layer, snap.scale);
            table.values[idx] += asi;
            ++counts[idx];
        }
    }

    for (size_t i = 0; i < table.values.size(); ++i) {
        if (counts[i] == 0) throw InvariantError("calibration saw no snapshots for a layer/scale pair");
        table.values[i] /= static_cast<double>(counts[i]);
    }
    // No history exists before the first scale; pin its index so the later
    // scales' statistics decide the roles.
    for (int l = 0; l < layers; ++l) table.values[table.index(l, 0)] = 1.0;

    compute_zscores(table);

    CalibrationResult result;
    result.roles = select_drafters(table, config.n_drafters, /*min_drafter_scale=*/1);
    result.table = std::move(table);
    return result;
}

}  // namespace scalekv
