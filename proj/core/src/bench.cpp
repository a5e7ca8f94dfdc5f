#include "scalekv/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

namespace scalekv {

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string format_fraction(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

// Row-wise KL(full || policy) from two logit matrices, averaged over rows.
double mean_row_kl(const Matrix& full, const Matrix& policy) {
    if (full.rows != policy.rows || full.cols != policy.cols)
        throw ShapeError("logit shapes disagree between runs");
    double total = 0.0;
    std::vector<double> logp(static_cast<size_t>(full.cols));
    std::vector<double> logq(static_cast<size_t>(full.cols));
    for (int r = 0; r < full.rows; ++r) {
        auto log_softmax = [&](const Matrix& m, std::vector<double>& out) {
            double max_v = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < m.cols; ++c) max_v = std::max(max_v, static_cast<double>(m.at(r, c)));
            double sum = 0.0;
            for (int c = 0; c < m.cols; ++c) sum += std::exp(static_cast<double>(m.at(r, c)) - max_v);
            double lse = max_v + std::log(sum);
            for (int c = 0; c < m.cols; ++c) out[static_cast<size_t>(c)] = static_cast<double>(m.at(r, c)) - lse;
        };
        log_softmax(full, logp);
        log_softmax(policy, logq);
        double kl = 0.0;
        for (int c = 0; c < full.cols; ++c) {
            size_t i = static_cast<size_t>(c);
            kl += std::exp(logp[i]) * (logp[i] - logq[i]);
        }
        total += std::max(0.0, kl);
    }
    return total / full.rows;
}

}  // namespace

std::string format_bench_row(const BenchRow& row) {
    std::ostringstream out;
    out << row.policy << ',' << format_fraction(row.budget_fraction) << ',' << row.seed << ','
        << format_double(row.logit_mse) << ',' << format_double(row.token_agreement) << ','
        << format_double(row.mean_kl) << ',' << row.peak_bytes << ',' << row.retained_tokens << ','
        << format_double(row.wall_ms);
    return out.str();
}

std::vector<BenchRow> parse_bench_csv(const std::string& text, const std::string& source_name) {
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    std::vector<BenchRow> rows;
    bool saw_header = false;
    while (std::getline(lines, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!saw_header) {
            if (line != kBenchCsvHeader)
                throw IoError(source_name + ":" + std::to_string(line_no) +
                              ": header does not match the fixed schema");
            saw_header = true;
            continue;
        }
        std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != 9)
            throw IoError(source_name + ":" + std::to_string(line_no) + ": expected 9 columns, got " +
                          std::to_string(cells.size()));
        BenchRow row;
        try {
            row.policy = cells[0];
            policy_kind_from_name(row.policy);
            row.budget_fraction = std::stod(cells[1]);
            row.seed = std::stoull(cells[2]);
            row.logit_mse = std::stod(cells[3]);
            row.token_agreement = std::stod(cells[4]);
            row.mean_kl = std::stod(cells[5]);
            row.peak_bytes = std::stoll(cells[6]);
            row.retained_tokens = std::stoll(cells[7]);
            row.wall_ms = std::stod(cells[8]);
        } catch (const std::exception&) {
            throw IoError(source_name + ":" + std::to_string(line_no) + ": malformed row");
        }
        rows.push_back(std::move(row));
    }
    if (!saw_header) throw IoError(source_name + ":1: empty CSV, header missing");
    return rows;
}

int64_t full_history_tokens(const ModelConfig& model, const ScaleSchedule& schedule) {
    return model.cond_tokens + schedule.total_tokens();
}

int64_t derive_b_uniform(double fraction, int64_t h_full) {
    if (!(fraction > 0.0)) throw ConfigError("budget fraction must be positive");
    return std::max<int64_t>(1, std::llround(fraction * static_cast<double>(h_full)));
}

PolicyDerivation derive_policy(const std::string& name, double fraction, const RunConfig& config,
                               const ScaleSchedule& schedule, const RolePlanFile* roles) {
    PolicyKind kind = policy_kind_from_name(name);
    const int64_t h_full = full_history_tokens(config.model, schedule);
    const int64_t b_uniform =
        config.b_uniform > 0 ? config.b_uniform : derive_b_uniform(fraction, h_full);
    const int window = config.observation_window;
    const int64_t min_budget = window;
    const bool everything = b_uniform >= h_full;

    PolicyDerivation derived;
    derived.b_uniform = b_uniform;
    switch (kind) {
        case PolicyKind::Full:
            derived.policy = PolicyConfig::full();
            break;
        case PolicyKind::SlidingWindow:
            derived.policy = PolicyConfig::sliding_window(b_uniform);
            break;
        case PolicyKind::Streaming: {
            int64_t sinks = std::min<int64_t>(config.sink_tokens, b_uniform - 1);
            derived.policy = PolicyConfig::streaming(sinks, b_uniform - sinks);
            break;
        }
        case PolicyKind::SnapKv:
            derived.policy = PolicyConfig::snapkv(b_uniform, window);
            break;
        case PolicyKind::Pyramid: {
            double slope = everything ? 0.0 : config.pyramid_slope_frac * static_cast<double>(b_uniform);
            derived.policy = PolicyConfig::pyramid(
                pyramid_plan(b_uniform, config.model.layers, schedule.num_scales(), min_budget, slope),
                window);
            break;
        }
        case PolicyKind::ScaleKv: {
            if (roles == nullptr)
                throw ConfigError("scalekv policy needs a calibrated role plan; run calibrate first");
            int64_t gap = everything ? 0 : config.scalekv.refiner_gap;
            int64_t decay = everything ? 0 : config.scalekv.decay;
            int64_t refiner_base = std::max<int64_t>(min_budget, b_uniform - gap);
            derived.policy = PolicyConfig::scalekv(
                roles->roles,
                scalekv_plan(roles->roles, b_uniform, refiner_base, decay, min_budget, schedule,
                             config.model.cond_tokens),
                window);
            break;
        }
    }
    derived.policy.validate(schedule);
    return derived;
}

BenchMetrics divergence_metrics(const GenerationTrace& full_trace, const GenerationTrace& policy_trace) {
    if (full_trace.scale_logits.empty() || policy_trace.scale_logits.empty())
        throw InvariantError("divergence metrics need per-scale logits");
    if (full_trace.scale_logits.size() != policy_trace.scale_logits.size())
        throw ShapeError("traces cover different scale counts");

    BenchMetrics metrics;
    const Matrix& f_final = full_trace.final_logits;
    const Matrix& p_final = policy_trace.final_logits;
    if (f_final.rows != p_final.rows || f_final.cols != p_final.cols)
        throw ShapeError("final logit shapes disagree");
    double sq = 0.0;
    for (size_t i = 0; i < f_final.data.size(); ++i) {
        double d = static_cast<double>(f_final.data[i]) - static_cast<double>(p_final.data[i]);
        sq += d * d;
    }
    metrics.logit_mse = sq / static_cast<double>(f_final.data.size());

    const TokenMap& f_map = full_trace.token_maps.back();
    const TokenMap& p_map = policy_trace.token_maps.back();
    if (f_map.size() != p_map.size()) throw ShapeError("final maps disagree in size");
    int64_t agree = 0;
    for (size_t i = 0; i < f_map.tokens.size(); ++i)
        if (f_map.tokens[i] == p_map.tokens[i]) ++agree;
    metrics.token_agreement = static_cast<double>(agree) / static_cast<double>(f_map.size());

    double kl = 0.0;
    for (size_t k = 0; k < full_trace.scale_logits.size(); ++k)
        kl += mean_row_kl(full_trace.scale_logits[k], policy_trace.scale_logits[k]);
    metrics.mean_kl = kl / static_cast<double>(full_trace.scale_logits.size());
    return metrics;
}

namespace {

void check_compliance(const GenerationTrace& trace, const std::string& policy) {
    for (const auto& boundary : trace.compress_audit)
        for (const auto& layer : boundary.layers)
            if (layer.history_retained > layer.bound)
                throw InvariantError("budget compliance violated: policy " + policy + " scale " +
                                     std::to_string(boundary.scale + 1) + " layer " +
                                     std::to_string(layer.layer) + " kept " +
                                     std::to_string(layer.history_retained) + " > bound " +
                                     std::to_string(layer.bound));
}

std::vector<int64_t> plan_totals(const PolicyConfig& policy, int num_scales) {
    std::vector<int64_t> totals;
    if (policy.kind == PolicyKind::Pyramid || policy.kind == PolicyKind::ScaleKv)
        for (int k = 0; k < num_scales; ++k) totals.push_back(policy.budget_plan.scale_total(k));
    return totals;
}

}  // namespace

BenchOutcome run_bench(const Model& model, const ScaleSchedule& schedule, const RunConfig& config,
                       const RolePlanFile* roles) {
    const ModelConfig& mc = model.config();
    const int64_t h_full = full_history_tokens(mc, schedule);
    const int64_t per_token = token_bytes(mc.heads, mc.head_dim(), 4);

    std::vector<double> fractions;
    if (config.b_uniform > 0)
        fractions.push_back(static_cast<double>(config.b_uniform) / static_cast<double>(h_full));
    else
        fractions = config.budget_fractions;

    GenerateOptions options;
    options.keep_scale_logits = true;

    std::map<uint64_t, GenerationTrace> full_traces;
    for (uint64_t seed : config.seeds)
        full_traces.emplace(seed, generate(model, PolicyConfig::full(), schedule, seed, options));

    BenchOutcome outcome;
    for (const std::string& name : config.policies) {
        for (double fraction : fractions) {
            PolicyDerivation derived = derive_policy(name, fraction, config, schedule, roles);
            for (uint64_t seed : config.seeds) {
                const GenerationTrace& full_trace = full_traces.at(seed);
                const GenerationTrace* trace = &full_trace;
                GenerationTrace own;
                if (derived.policy.kind != PolicyKind::Full) {
                    own = generate(model, derived.policy, schedule, seed, options);
                    trace = &own;
                }
                check_compliance(*trace, name);

                BenchMetrics metrics = divergence_metrics(full_trace, *trace);
                BenchRow row;
                row.policy = name;
                row.budget_fraction = fraction;
                row.seed = seed;
                row.logit_mse = metrics.logit_mse;
                row.token_agreement = metrics.token_agreement;
                row.mean_kl = metrics.mean_kl;
                row.peak_bytes = trace->peak_bytes;
                row.retained_tokens = trace->end_retained;
                row.wall_ms = trace->wall_ms;
                outcome.rows.push_back(row);

                BenchAudit audit;
                audit.policy = name;
                audit.budget_fraction = fraction;
                audit.seed = seed;
                audit.b_uniform = derived.b_uniform;
                audit.token_bytes = per_token;
                audit.peak_bytes = trace->peak_bytes;
                audit.end_bytes = trace->end_bytes;
                audit.end_retained = trace->end_retained;
                audit.plan_scale_totals = plan_totals(derived.policy, schedule.num_scales());
                audit.boundaries = trace->compress_audit;
                outcome.audits.push_back(std::move(audit));
            }
        }
    }

    std::ostringstream csv;
    csv << kBenchCsvHeader << '\n';
    for (const auto& row : outcome.rows) csv << format_bench_row(row) << '\n';
    outcome.csv = csv.str();

    // Per-policy, per-fraction means plus the budget accounting that the
    // retained-token ratios are judged against.
    using ojson = nlohmann::ordered_json;
    ojson summary;
    summary["csv_schema_version"] = kBenchCsvSchemaVersion;
    summary["h_full"] = h_full;
    summary["token_bytes"] = per_token;
    summary["full_bytes"] = h_full * mc.layers * per_token;
    const double tol =
        static_cast<double>(mc.layers * schedule.num_scales() * (1 + config.observation_window)) /
        static_cast<double>(h_full * mc.layers);
    summary["retained_ratio_tolerance"] = tol;
    ojson budgets;
    for (double fraction : fractions)
        budgets[format_fraction(fraction)] =
            config.b_uniform > 0 ? config.b_uniform : derive_b_uniform(fraction, h_full);
    summary["b_uniform"] = std::move(budgets);
    summary["rows"] = outcome.rows.size();

    ojson policies;
    for (const std::string& name : config.policies) {
        ojson per_fraction;
        for (double fraction : fractions) {
            double mse = 0.0, agree = 0.0, kl = 0.0, peak = 0.0, ratio = 0.0;
            int n = 0;
            for (const auto& row : outcome.rows) {
                if (row.policy != name || row.budget_fraction != fraction) continue;
                mse += row.logit_mse;
                agree += row.token_agreement;
                kl += row.mean_kl;
                peak += static_cast<double>(row.peak_bytes);
                ratio += static_cast<double>(row.retained_tokens) /
                         static_cast<double>(h_full * mc.layers);
                ++n;
            }
            if (n == 0) continue;
            ojson cell;
            cell["logit_mse"] = mse / n;
            cell["token_agreement"] = agree / n;
            cell["mean_kl"] = kl / n;
            cell["peak_bytes"] = peak / n;
            cell["retained_ratio"] = ratio / n;
            per_fraction[format_fraction(fraction)] = std::move(cell);
        }
        policies[name] = std::move(per_fraction);
    }
    summary["policies"] = std::move(policies);
    outcome.summary_json = summary.dump(2) + "\n";
    return outcome;
}

}  // namespace scalekv
