#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scalekv/model.hpp"
#include "scalekv/scale_geometry.hpp"

namespace scalekv {

// Options for the scalekv policy: where the calibrated role plan lives and
// how refiner budgets shrink. refiner_base = b_uniform - refiner_gap.
struct ScaleKvOptions {
    std::string role_plan_path;
    int64_t refiner_gap = 1;
    int64_t decay = 1;
};

struct CalibrationOptions {
    std::vector<uint64_t> prompt_seeds;
    int k_prime = 16;
    int n_drafters = 10;
};

// Single-run settings used by the `generate` command (and `inspect`, which
// reads what `generate` wrote).
struct SingleRunOptions {
    std::string policy = "full";
    double budget_fraction = 1.0;
    bool capture_snapshots = true;
};

// One JSON document configures every command. Unknown keys anywhere in the
// document are rejected so typos fail loudly instead of silently using a
// default.
struct RunConfig {
    ModelConfig model;
    int schedule_scales = 6;                      // square-linear preset ...
    std::vector<std::pair<int, int>> schedule_dims;  // ... unless dims given
    std::vector<uint64_t> seeds = {11, 12, 13};
    std::string output_dir = "out";

    std::vector<std::string> policies = {"full",   "sliding_window", "streaming",
                                         "snapkv", "pyramid",        "scalekv"};
    std::vector<double> budget_fractions = {0.04, 0.10, 0.20};
    int64_t b_uniform = 0;  // when positive, overrides the fraction grid

    int observation_window = 1;
    int sink_tokens = 4;
    double pyramid_slope_frac = 0.2;
    ScaleKvOptions scalekv;
    CalibrationOptions calibration;
    SingleRunOptions single_run;

    ScaleSchedule make_schedule() const;
    void validate() const;
};

// Parses and validates a config document. ConfigError names the offending
// key; IoError covers unreadable files.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// The toy benchmark configuration used throughout the docs and tests.
std::string default_config_json();

}  // namespace scalekv
