#include "scalekv/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

namespace scalekv {

namespace {

namespace fs = std::filesystem;

std::string format_fraction(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

RolePlanFile load_roles_for(const RunConfig& config) {
    if (config.scalekv.role_plan_path.empty())
        throw ConfigError("scalekv policy needs scalekv.role_plan in the config; run calibrate first");
    if (!fs::exists(config.scalekv.role_plan_path))
        throw ConfigError("role plan file not found: " + config.scalekv.role_plan_path +
                          "; run calibrate first");
    return load_role_plan(config.scalekv.role_plan_path);
}

bool wants_scalekv(const RunConfig& config) {
    return std::find(config.policies.begin(), config.policies.end(), "scalekv") !=
           config.policies.end();
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& extension) {
    std::vector<std::string> paths;
    if (!fs::is_directory(dir)) return paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == extension)
            paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    return paths;
}

}  // namespace

CalibrateOutput cmd_calibrate(const RunConfig& config, const std::string& out_dir, std::ostream& log) {
    Model model = Model::init(config.model);
    ScaleSchedule schedule = config.make_schedule();

    CalibrationConfig cal;
    cal.prompt_seeds = config.calibration.prompt_seeds;
    cal.topk_history = config.calibration.k_prime;
    cal.n_drafters = config.calibration.n_drafters;

    CalibrateOutput output;
    output.result = calibrate(model, schedule, cal);

    ensure_dir(out_dir);
    output.plan_path = out_dir + "/role_plan.json";
    save_role_plan(output.plan_path, output.result.table, output.result.roles);

    std::vector<int> per_scale(static_cast<size_t>(schedule.num_scales()), 0);
    for (const auto& pair : output.result.roles.drafters) ++per_scale[static_cast<size_t>(pair.scale)];
    log << "calibrated " << config.calibration.prompt_seeds.size() << " prompt(s), "
        << output.result.roles.drafters.size() << " drafter pair(s) of "
        << config.model.layers * schedule.num_scales() << ":\n";
    for (int k = 0; k < schedule.num_scales(); ++k)
        log << "  scale " << (k + 1) << ": " << per_scale[static_cast<size_t>(k)] << " drafter(s) / "
            << config.model.layers << " layers\n";
    log << "wrote " << output.plan_path << "\n";
    return output;
}

BenchOutput cmd_bench(const RunConfig& config, const std::string& out_dir, std::ostream& log) {
    Model model = Model::init(config.model);
    ScaleSchedule schedule = config.make_schedule();

    RolePlanFile roles;
    const RolePlanFile* roles_ptr = nullptr;
    if (wants_scalekv(config)) {
        roles = load_roles_for(config);
        roles_ptr = &roles;
    }

    BenchOutput output;
    output.outcome = run_bench(model, schedule, config, roles_ptr);

    ensure_dir(out_dir);
    output.csv_path = out_dir + "/bench.csv";
    output.summary_path = out_dir + "/summary.json";
    output.audits_dir = out_dir + "/audits";
    ensure_dir(output.audits_dir);
    write_text_file(output.csv_path, output.outcome.csv);
    write_text_file(output.summary_path, output.outcome.summary_json);
    for (const auto& audit : output.outcome.audits) {
        std::string name = audit.policy + "_" + format_fraction(audit.budget_fraction) + "_" +
                           std::to_string(audit.seed) + ".json";
        save_bench_audit(output.audits_dir + "/" + name, audit);
    }

    log << "ran " << output.outcome.rows.size() << " sweep cell(s)\n";
    log << "wrote " << output.csv_path << ", " << output.summary_path << ", "
        << output.outcome.audits.size() << " audit file(s)\n";
    return output;
}

GenerateOutput cmd_generate(const RunConfig& config, const std::string& out_dir,
                            const uint64_t* seed_override, std::ostream& log) {
    Model model = Model::init(config.model);
    ScaleSchedule schedule = config.make_schedule();

    RolePlanFile roles;
    const RolePlanFile* roles_ptr = nullptr;
    if (config.single_run.policy == "scalekv") {
        roles = load_roles_for(config);
        roles_ptr = &roles;
    }
    PolicyDerivation derived =
        derive_policy(config.single_run.policy, config.single_run.budget_fraction, config, schedule,
                      roles_ptr);

    uint64_t seed = seed_override != nullptr ? *seed_override : config.seeds.front();
    GenerateOptions options;
    options.capture_snapshots = config.single_run.capture_snapshots;

    GenerateOutput output;
    output.trace = generate(model, derived.policy, schedule, seed, options);

    TraceMeta meta;
    meta.model = config.model;
    for (int k = 0; k < schedule.num_scales(); ++k)
        meta.schedule_dims.emplace_back(schedule.rows_at(k), schedule.cols_at(k));
    meta.policy = config.single_run.policy;
    meta.budget_fraction = config.single_run.budget_fraction;
    meta.prompt_seed = seed;
    meta.weight_checksum = model.weight_checksum();

    output.trace_dir = out_dir + "/trace";
    write_trace(output.trace_dir, meta, output.trace);
    log << "generated " << schedule.num_scales() << " scale(s) under policy "
        << config.single_run.policy << " (seed " << seed << "), peak " << output.trace.peak_bytes
        << " bytes, end " << output.trace.end_bytes << " bytes\n";
    log << "wrote " << output.trace_dir << "\n";
    return output;
}

InspectOutput cmd_inspect(const RunConfig& config, const std::string& out_dir, int layer, int scale,
                          std::ostream& log) {
    (void)config;
    const std::string trace_dir = out_dir + "/trace";
    if (!fs::exists(trace_dir + "/stats.json"))
        throw IoError("no trace at " + trace_dir + "; run generate first");
    LoadedTrace trace = read_trace(trace_dir);
    if (trace.snapshots.empty())
        throw IoError("trace at " + trace_dir +
                      " has no attention snapshots; rerun generate with capture_snapshots");

    ScaleSchedule schedule = build_schedule(trace.meta.schedule_dims);
    const int layers = trace.meta.model.layers;
    const int scales = schedule.num_scales();
    const int64_t cond = trace.meta.model.cond_tokens;
    if (layer >= layers) throw ConfigError("layer filter out of range");
    if (scale >= 1 && scale > scales) throw ConfigError("scale filter out of range");

    // Head-averaged per-row normalized current attention, grouped by (l, k),
    // plus the head-averaged selectivity index per pair.
    std::map<std::pair<int, int>, std::vector<double>> samples;
    AsiTable table;
    table.num_layers = layers;
    table.num_scales = scales;
    table.topk_history = config.calibration.k_prime;
    table.values.assign(static_cast<size_t>(layers) * scales, 0.0);
    table.zscores.assign(table.values.size(), 0.0);
    std::vector<int> counts(table.values.size(), 0);

    for (const auto& snap : trace.snapshots) {
        SequencePartition part = partition(schedule, snap.scale, cond);
        if (snap.weights.cols != part.total_len())
            throw InvariantError(
                "snapshot columns do not cover the full history; inspect needs a full-cache trace");
        std::vector<double> rows = normalized_current_attention_rows(snap, part);
        auto& bucket = samples[{snap.layer, snap.scale}];
        if (bucket.empty()) bucket.assign(rows.size(), 0.0);
        for (size_t i = 0; i < rows.size(); ++i) bucket[i] += rows[i];
        size_t idx = table.index(snap.layer, snap.scale);
        table.values[idx] += attention_selectivity_index(snap, part, table.topk_history);
        ++counts[idx];
    }
    const int heads = trace.meta.model.heads;
    for (auto& [key, bucket] : samples)
        for (double& v : bucket) v /= heads;
    for (size_t i = 0; i < table.values.size(); ++i)
        if (counts[i] > 0) table.values[i] /= counts[i];
    compute_zscores(table);

    const std::string inspect_dir = out_dir + "/inspect";
    ensure_dir(inspect_dir);
    InspectOutput output;

    std::ostringstream asi_csv;
    asi_csv << "layer,scale,asi,zscore\n";
    char buf[64];
    for (int l = 0; l < layers; ++l)
        for (int k = 0; k < scales; ++k) {
            std::snprintf(buf, sizeof(buf), "%.12g,%.12g", table.value(l, k), table.zscore(l, k));
            asi_csv << l << ',' << (k + 1) << ',' << buf << '\n';
        }
    output.asi_csv_path = inspect_dir + "/asi_zscores.csv";
    write_text_file(output.asi_csv_path, asi_csv.str());

    std::ostringstream samples_csv;
    samples_csv << "layer,scale,row,value\n";
    int64_t emitted = 0;
    for (const auto& [key, bucket] : samples) {
        if (layer >= 0 && key.first != layer) continue;
        if (scale >= 1 && key.second != scale - 1) continue;
        for (size_t i = 0; i < bucket.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.12g", bucket[i]);
            samples_csv << key.first << ',' << (key.second + 1) << ',' << i << ',' << buf << '\n';
            ++emitted;
        }
    }
    output.samples_csv_path = inspect_dir + "/nca_samples.csv";
    write_text_file(output.samples_csv_path, samples_csv.str());

    // Pooled sample columns: the small-scale group (maps 2..4) against the
    // last three scales, for density plots of how current-attention shifts.
    std::vector<double> small_group, large_group;
    for (const auto& [key, bucket] : samples) {
        int k = key.second;  // zero-based
        if (k >= 1 && k <= 3) small_group.insert(small_group.end(), bucket.begin(), bucket.end());
        if (k >= scales - 3) large_group.insert(large_group.end(), bucket.begin(), bucket.end());
    }
    std::ostringstream groups_csv;
    groups_csv << "small,large\n";
    size_t rows = std::max(small_group.size(), large_group.size());
    for (size_t i = 0; i < rows; ++i) {
        if (i < small_group.size()) {
            std::snprintf(buf, sizeof(buf), "%.12g", small_group[i]);
            groups_csv << buf;
        }
        groups_csv << ',';
        if (i < large_group.size()) {
            std::snprintf(buf, sizeof(buf), "%.12g", large_group[i]);
            groups_csv << buf;
        }
        groups_csv << '\n';
    }
    output.groups_csv_path = inspect_dir + "/nca_groups.csv";
    write_text_file(output.groups_csv_path, groups_csv.str());

    log << "inspected " << trace.snapshots.size() << " snapshot(s); wrote " << output.asi_csv_path
        << ", " << output.samples_csv_path << " (" << emitted << " sample(s)), "
        << output.groups_csv_path << "\n";
    return output;
}

ReportOutput cmd_report(const RunConfig& config, const std::string& out_dir, std::ostream& log) {
    (void)config;
    std::vector<std::pair<std::string, std::string>> csv_sources;
    for (const auto& path : sorted_files(out_dir, ".csv"))
        csv_sources.emplace_back(path, read_text_file(path));
    if (csv_sources.empty()) throw ConfigError("no bench CSV files in " + out_dir + "; run bench first");

    std::vector<BenchAudit> audits;
    for (const auto& path : sorted_files(out_dir + "/audits", ".json"))
        audits.push_back(load_bench_audit(path));

    ReportOutput output;
    output.result = build_report(csv_sources, audits);
    output.report_path = out_dir + "/report.md";
    write_text_file(output.report_path, output.result.markdown);
    log << output.result.markdown;
    log << "wrote " << output.report_path << "\n";
    if (!output.result.violations.empty())
        throw InvariantError("report found " + std::to_string(output.result.violations.size()) +
                             " violation(s); see " + output.report_path);
    return output;
}

}  // namespace scalekv
