#include "scalekv/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "scalekv/cache_engine.hpp"

namespace scalekv {

namespace {

using json = nlohmann::json;

void check_keys(const json& obj, const char* context, std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known) throw ConfigError(std::string("unknown key \"") + item.key() + "\" in " + context);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("key \"") + key + "\" has the wrong type");
    }
}

void parse_model(const json& obj, ModelConfig& model) {
    check_keys(obj, "model", {"layers", "heads", "d_model", "vocab", "seed", "cond_tokens"});
    model.layers = get_or(obj, "layers", model.layers);
    model.heads = get_or(obj, "heads", model.heads);
    model.d_model = get_or(obj, "d_model", model.d_model);
    model.vocab = get_or(obj, "vocab", model.vocab);
    model.seed = get_or(obj, "seed", model.seed);
    model.cond_tokens = get_or(obj, "cond_tokens", model.cond_tokens);
}

void parse_schedule(const json& obj, RunConfig& config) {
    check_keys(obj, "schedule", {"preset", "K", "explicit"});
    const bool has_preset = obj.contains("preset") || obj.contains("K");
    if (has_preset && obj.contains("explicit"))
        throw ConfigError("schedule takes a preset or an explicit list, not both");
    if (obj.contains("explicit")) {
        config.schedule_dims.clear();
        for (const auto& pair : obj.at("explicit")) {
            if (!pair.is_array() || pair.size() != 2)
                throw ConfigError("schedule explicit entries must be [rows, cols] pairs");
            config.schedule_dims.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
        }
        config.schedule_scales = 0;
    } else {
        const std::string preset = get_or<std::string>(obj, "preset", "square-linear");
        if (preset != "square-linear")
            throw ConfigError("unknown schedule preset \"" + preset + "\"");
        config.schedule_scales = get_or(obj, "K", config.schedule_scales);
    }
}

}  // namespace

ScaleSchedule RunConfig::make_schedule() const {
    if (!schedule_dims.empty()) return build_schedule(schedule_dims);
    return build_schedule(schedule_scales, SchedulePreset::SquareLinear);
}

void RunConfig::validate() const {
    model.validate();
    make_schedule();
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (policies.empty()) throw ConfigError("policies must be non-empty");
    std::set<std::string> seen;
    for (const auto& name : policies) {
        policy_kind_from_name(name);  // throws ConfigError on unknown names
        if (!seen.insert(name).second) throw ConfigError("policy \"" + name + "\" listed twice");
    }
    if (b_uniform < 0) throw ConfigError("b_uniform must be positive when given");
    if (b_uniform == 0 && budget_fractions.empty())
        throw ConfigError("either budget_fractions or b_uniform is required");
    for (double f : budget_fractions)
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("budget fractions must lie in (0, 1]");
    if (observation_window < 1) throw ConfigError("observation_window must be at least 1");
    if (sink_tokens < 0) throw ConfigError("sink_tokens must be non-negative");
    if (pyramid_slope_frac < 0.0) throw ConfigError("pyramid_slope_frac must be non-negative");
    if (scalekv.refiner_gap < 0) throw ConfigError("scalekv.refiner_gap must be non-negative");
    if (scalekv.decay < 0) throw ConfigError("scalekv.decay must be non-negative");
    if (calibration.prompt_seeds.empty()) throw ConfigError("calibration.prompt_seeds must be non-empty");
    if (calibration.k_prime < 1) throw ConfigError("calibration.k_prime must be positive");
    if (calibration.n_drafters < 0) throw ConfigError("calibration.n_drafters must be non-negative");
    if (!(single_run.budget_fraction > 0.0 && single_run.budget_fraction <= 1.0))
        throw ConfigError("policy.budget_fraction must lie in (0, 1]");
    policy_kind_from_name(single_run.policy);
}

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
    check_keys(doc, "config root",
               {"model", "schedule", "seeds", "output_dir", "policies", "budget_fractions",
                "b_uniform", "observation_window", "sink_tokens", "pyramid_slope_frac", "scalekv",
                "calibration", "policy"});

    RunConfig config;
    config.calibration.prompt_seeds = {100, 101, 102, 103, 104, 105, 106, 107, 108, 109};
    try {
        if (doc.contains("model")) parse_model(doc.at("model"), config.model);
        if (doc.contains("schedule")) parse_schedule(doc.at("schedule"), config);
        config.seeds = get_or(doc, "seeds", config.seeds);
        config.output_dir = get_or(doc, "output_dir", config.output_dir);
        config.policies = get_or(doc, "policies", config.policies);
        config.budget_fractions = get_or(doc, "budget_fractions", config.budget_fractions);
        config.b_uniform = get_or(doc, "b_uniform", config.b_uniform);
        config.observation_window = get_or(doc, "observation_window", config.observation_window);
        config.sink_tokens = get_or(doc, "sink_tokens", config.sink_tokens);
        config.pyramid_slope_frac = get_or(doc, "pyramid_slope_frac", config.pyramid_slope_frac);
        if (doc.contains("scalekv")) {
            const json& sk = doc.at("scalekv");
            check_keys(sk, "scalekv", {"role_plan", "refiner_gap", "decay"});
            config.scalekv.role_plan_path = get_or<std::string>(sk, "role_plan", "");
            config.scalekv.refiner_gap = get_or(sk, "refiner_gap", config.scalekv.refiner_gap);
            config.scalekv.decay = get_or(sk, "decay", config.scalekv.decay);
        }
        if (doc.contains("calibration")) {
            const json& cal = doc.at("calibration");
            check_keys(cal, "calibration", {"prompt_seeds", "k_prime", "n_drafters"});
            config.calibration.prompt_seeds =
                get_or(cal, "prompt_seeds", config.calibration.prompt_seeds);
            config.calibration.k_prime = get_or(cal, "k_prime", config.calibration.k_prime);
            config.calibration.n_drafters = get_or(cal, "n_drafters", config.calibration.n_drafters);
        }
        if (doc.contains("policy")) {
            const json& run = doc.at("policy");
            check_keys(run, "policy", {"kind", "budget_fraction", "capture_snapshots"});
            config.single_run.policy = get_or(run, "kind", config.single_run.policy);
            config.single_run.budget_fraction =
                get_or(run, "budget_fraction", config.single_run.budget_fraction);
            config.single_run.capture_snapshots =
                get_or(run, "capture_snapshots", config.single_run.capture_snapshots);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config value: ") + e.what());
    }

    config.validate();
    return config;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str());
}

std::string default_config_json() {
    return R"({
  "model": {"layers": 8, "heads": 4, "d_model": 64, "vocab": 256, "seed": 0, "cond_tokens": 12},
  "schedule": {"preset": "square-linear", "K": 6},
  "seeds": [11, 12, 13],
  "output_dir": "out",
  "policies": ["full", "sliding_window", "streaming", "snapkv", "pyramid", "scalekv"],
  "budget_fractions": [0.04, 0.10, 0.20],
  "observation_window": 1,
  "sink_tokens": 4,
  "pyramid_slope_frac": 0.2,
  "scalekv": {"role_plan": "out/role_plan.json", "refiner_gap": 1, "decay": 1},
  "calibration": {"prompt_seeds": [100, 101, 102, 103, 104, 105, 106, 107, 108, 109], "k_prime": 16, "n_drafters": 10},
  "policy": {"kind": "full", "budget_fraction": 1.0, "capture_snapshots": true}
}
)";
}

}  // namespace scalekv
