#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <tuple>

#include "scalekv/calibration.hpp"

using namespace scalekv;

namespace {

ModelConfig calib_model_config() {
    ModelConfig cfg;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.d_model = 32;
    cfg.vocab = 64;
    cfg.seed = 3;
    cfg.cond_tokens = 6;
    return cfg;
}

CalibrationConfig calib_config() {
    CalibrationConfig cfg;
    cfg.prompt_seeds = {1, 2};
    cfg.topk_history = 4;
    cfg.n_drafters = 3;
    return cfg;
}

}  // namespace

TEST_CASE("calibration is deterministic") {
    Model model = Model::init(calib_model_config());
    ScaleSchedule schedule = build_schedule(4);
    CalibrationResult a = calibrate(model, schedule, calib_config());
    CalibrationResult b = calibrate(model, schedule, calib_config());

    CHECK(a.table.values == b.table.values);
    CHECK(a.table.zscores == b.table.zscores);
    CHECK(a.table.digest() == b.table.digest());
    REQUIRE(a.roles.drafters.size() == b.roles.drafters.size());
    for (size_t i = 0; i < a.roles.drafters.size(); ++i) {
        CHECK(a.roles.drafters[i].layer == b.roles.drafters[i].layer);
        CHECK(a.roles.drafters[i].scale == b.roles.drafters[i].scale);
    }
    CHECK(!a.roles.source_digest.empty());
    CHECK(a.roles.source_digest == b.roles.source_digest);

    CalibrationConfig other = calib_config();
    other.prompt_seeds = {5, 6};
    CalibrationResult c = calibrate(model, schedule, other);
    CHECK(a.table.values != c.table.values);
}

TEST_CASE("calibration pins the first scale and never drafts it") {
    Model model = Model::init(calib_model_config());
    ScaleSchedule schedule = build_schedule(4);
    CalibrationResult result = calibrate(model, schedule, calib_config());

    REQUIRE(result.table.num_layers == 4);
    REQUIRE(result.table.num_scales == 4);
    for (int l = 0; l < 4; ++l) {
        CHECK(result.table.value(l, 0) == 1.0);
        CHECK(result.table.zscore(l, 0) == 0.0);
    }
    for (const RankedPair& pair : result.roles.drafters) CHECK(pair.scale >= 1);

    // Later scales have real history, so their indices stay inside (0, 1].
    for (int l = 0; l < 4; ++l)
        for (int k = 1; k < 4; ++k) {
            CHECK(result.table.value(l, k) > 0.0);
            CHECK(result.table.value(l, k) <= 1.0);
        }
}

TEST_CASE("calibration yields a clean drafter/refiner partition") {
    Model model = Model::init(calib_model_config());
    ScaleSchedule schedule = build_schedule(4);
    CalibrationResult result = calibrate(model, schedule, calib_config());

    CHECK(result.roles.n_drafters == 3);
    CHECK(result.roles.drafters.size() == 3);
    CHECK(result.roles.refiners.size() == 16 - 3);
    auto ranked_less = [](const RankedPair& a, const RankedPair& b) {
        return std::tie(a.zscore, a.layer, a.scale) < std::tie(b.zscore, b.layer, b.scale);
    };
    CHECK(std::is_sorted(result.roles.drafters.begin(), result.roles.drafters.end(), ranked_less));
    CHECK(std::is_sorted(result.roles.refiners.begin(), result.roles.refiners.end(), ranked_less));
    for (const RankedPair& pair : result.roles.drafters) {
        CHECK(result.roles.is_drafter(pair.layer, pair.scale));
        for (const RankedPair& other : result.roles.refiners)
            CHECK((other.layer != pair.layer || other.scale != pair.scale));
    }

    // Standardization holds per scale: zero mean everywhere, unit spread
    // wherever the scale actually varies across layers.
    for (int k = 0; k < 4; ++k) {
        double mean = 0.0;
        for (int l = 0; l < 4; ++l) mean += result.table.zscore(l, k);
        mean /= 4.0;
        CHECK(std::abs(mean) < 1e-9);
    }
}

TEST_CASE("calibration with zero drafters keeps everyone a refiner") {
    Model model = Model::init(calib_model_config());
    ScaleSchedule schedule = build_schedule(3);
    CalibrationConfig cfg = calib_config();
    cfg.n_drafters = 0;
    CalibrationResult result = calibrate(model, schedule, cfg);
    CHECK(result.roles.drafters.empty());
    CHECK(result.roles.refiners.size() == 12);
}

TEST_CASE("calibration validates its configuration") {
    Model model = Model::init(calib_model_config());
    ScaleSchedule schedule = build_schedule(3);

    CalibrationConfig cfg = calib_config();
    cfg.prompt_seeds.clear();
    CHECK_THROWS_AS(calibrate(model, schedule, cfg), ConfigError);

    cfg = calib_config();
    cfg.topk_history = 0;
    CHECK_THROWS_AS(calibrate(model, schedule, cfg), ConfigError);

    cfg = calib_config();
    cfg.n_drafters = -1;
    CHECK_THROWS_AS(calibrate(model, schedule, cfg), ConfigError);

    // Only scales past the first are draftable: 4 layers * 2 scales here.
    cfg = calib_config();
    cfg.n_drafters = 9;
    CHECK_THROWS_AS(calibrate(model, schedule, cfg), ConfigError);
    cfg.n_drafters = 8;
    CHECK_NOTHROW(calibrate(model, schedule, cfg));
}
