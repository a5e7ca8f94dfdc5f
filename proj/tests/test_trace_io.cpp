#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "scalekv/calibration.hpp"
#include "scalekv/trace_io.hpp"
#include "test_util.hpp"

using testutil::TempDir;

using namespace scalekv;

namespace {

AsiTable sample_table() {
    AsiTable table;
    table.num_layers = 2;
    table.num_scales = 3;
    table.topk_history = 4;
    table.values = {1.0, 0.5, 0.25, 1.0, 0.75, 0.3125};
    compute_zscores(table);
    return table;
}

}  // namespace

TEST_CASE("text files and directories round-trip") {
    TempDir dir;
    ensure_dir(dir.file("nested/twice"));
    CHECK(std::filesystem::is_directory(dir.file("nested/twice")));

    write_text_file(dir.file("note.txt"), "alpha\nbeta\n");
    CHECK(read_text_file(dir.file("note.txt")) == "alpha\nbeta\n");
    CHECK_THROWS_AS(read_text_file(dir.file("missing.txt")), IoError);
}

TEST_CASE("role plans survive a save/load cycle") {
    TempDir dir;
    AsiTable table = sample_table();
    RolePlan roles = select_drafters(table, 2, 1);
    const std::string path = dir.file("roles.json");
    save_role_plan(path, table, roles);

    RolePlanFile loaded = load_role_plan(path);
    CHECK(loaded.table.num_layers == 2);
    CHECK(loaded.table.num_scales == 3);
    CHECK(loaded.table.topk_history == 4);
    CHECK(loaded.table.values == table.values);
    CHECK(loaded.table.zscores == table.zscores);
    CHECK(loaded.table.epsilon == table.epsilon);
    CHECK(loaded.roles.n_drafters == 2);
    REQUIRE(loaded.roles.drafters.size() == roles.drafters.size());
    for (size_t i = 0; i < roles.drafters.size(); ++i) {
        CHECK(loaded.roles.drafters[i].layer == roles.drafters[i].layer);
        CHECK(loaded.roles.drafters[i].scale == roles.drafters[i].scale);
    }
    for (const RankedPair& pair : roles.refiners) CHECK(!loaded.roles.is_drafter(pair.layer, pair.scale));
}

TEST_CASE("role plan files use one-based scale indices") {
    TempDir dir;
    const std::string path = dir.file("hand.json");
    write_text_file(path, R"({
      "layers": 1, "scales": 2, "K_prime": 4, "N_d": 1, "epsilon": 1e-8,
      "asi": [[0, 1, 0.5], [0, 2, 0.25]],
      "z": [[0, 1, 1.0], [0, 2, -1.0]],
      "drafters": [[0, 2]]
    })");
    RolePlanFile loaded = load_role_plan(path);
    CHECK(loaded.table.value(0, 0) == 0.5);
    CHECK(loaded.table.value(0, 1) == 0.25);
    CHECK(loaded.table.zscore(0, 1) == -1.0);
    CHECK(loaded.roles.is_drafter(0, 1));
    CHECK(!loaded.roles.is_drafter(0, 0));

    // The writer uses the same convention: were it zero-based, loading its
    // own output would shift every first-scale entry to index -1 and fail.
    AsiTable table = sample_table();
    save_role_plan(dir.file("written.json"), table, select_drafters(table, 1, 1));
    CHECK_NOTHROW(load_role_plan(dir.file("written.json")));
}

TEST_CASE("role plan loading rejects broken files") {
    TempDir dir;
    const std::string path = dir.file("bad.json");

    write_text_file(path, "{ not json");
    CHECK_THROWS_AS(load_role_plan(path), IoError);

    write_text_file(path, R"({"layers": 1, "scales": 1})");
    CHECK_THROWS_WITH_AS(load_role_plan(path), doctest::Contains("missing key"), IoError);

    write_text_file(path, R"({
      "layers": 1, "scales": 1, "K_prime": 4, "N_d": 1, "epsilon": 1e-8,
      "asi": [[0, 1, 1.0]], "z": [[0, 1, 0.0]], "drafters": [[5, 1]]
    })");
    CHECK_THROWS_AS(load_role_plan(path), IoError);

    write_text_file(path, R"({
      "layers": 1, "scales": 1, "K_prime": 4, "N_d": 0, "epsilon": 1e-8,
      "asi": [[0, 7, 1.0]], "z": [], "drafters": []
    })");
    CHECK_THROWS_AS(load_role_plan(path), IoError);

    CHECK_THROWS_AS(load_role_plan(dir.file("absent.json")), IoError);
}

TEST_CASE("budget plans survive a save/load cycle") {
    TempDir dir;
    AsiTable table = sample_table();
    RolePlan roles = select_drafters(table, 2, 1);
    ScaleSchedule schedule = build_schedule(3);
    BudgetPlan plan = scalekv_plan(roles, 6, 4, 1, 2, schedule, 100);

    const std::string path = dir.file("budget.json");
    save_budget_plan(path, plan);
    BudgetPlan loaded = load_budget_plan(path);
    CHECK(loaded.num_layers == plan.num_layers);
    CHECK(loaded.num_scales == plan.num_scales);
    CHECK(loaded.b_uniform == plan.b_uniform);
    CHECK(loaded.refiner_base == plan.refiner_base);
    CHECK(loaded.decay == plan.decay);
    CHECK(loaded.min_budget == plan.min_budget);
    CHECK(loaded.budgets == plan.budgets);
    CHECK(loaded.drafter_count == plan.drafter_count);
    CHECK(loaded.refiner_count == plan.refiner_count);

    write_text_file(path, R"({"layers": 1})");
    CHECK_THROWS_AS(load_budget_plan(path), IoError);
}

TEST_CASE("snapshot streams round-trip bit-exactly") {
    TempDir dir;
    std::vector<AttentionSnapshot> snaps(2);
    snaps[0].layer = 1;
    snaps[0].scale = 0;
    snaps[0].head = 2;
    snaps[0].weights = Matrix(2, 3);
    for (int i = 0; i < 6; ++i) snaps[0].weights.data[static_cast<size_t>(i)] = 0.125f * (i - 2);
    snaps[1].layer = 0;
    snaps[1].scale = 2;
    snaps[1].head = 1;
    snaps[1].weights = Matrix(1, 4);
    snaps[1].weights.data = {1.0f, -0.0f, 3.5e-8f, 0.99999f};

    const std::string path = dir.file("snapshots.bin");
    write_snapshots(path, snaps);
    std::vector<AttentionSnapshot> loaded = read_snapshots(path);
    REQUIRE(loaded.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(loaded[i].layer == snaps[i].layer);
        CHECK(loaded[i].scale == snaps[i].scale);
        CHECK(loaded[i].head == snaps[i].head);
        CHECK(loaded[i].weights.rows == snaps[i].weights.rows);
        CHECK(loaded[i].weights.data == snaps[i].weights.data);
    }

    // On-disk scale is one-based: the second record's scale field reads 3.
    std::ifstream raw(path, std::ios::binary);
    raw.seekg(5 * 4 + 6 * 4 + 4, std::ios::beg);  // header + payload + layer field
    unsigned char bytes[4];
    raw.read(reinterpret_cast<char*>(bytes), 4);
    CHECK(bytes[0] == 3);

    write_text_file(dir.file("short.bin"), "\x01\x00\x00");
    CHECK_THROWS_AS(read_snapshots(dir.file("short.bin")), IoError);

    write_snapshots(dir.file("empty.bin"), {});
    CHECK(read_snapshots(dir.file("empty.bin")).empty());
}

TEST_CASE("token map CSV parsing validates its grid") {
    TempDir dir;
    const std::string path = dir.file("map.csv");

    write_text_file(path, "1,2\n3,4\n");
    TokenMap map = read_token_map_csv(path);
    CHECK(map.rows == 2);
    CHECK(map.cols == 2);
    CHECK(map.at(1, 0) == 3);

    write_text_file(path, "1,2\n3\n");
    CHECK_THROWS_WITH_AS(read_token_map_csv(path), doctest::Contains("ragged"), IoError);
    write_text_file(path, "1,x\n");
    CHECK_THROWS_AS(read_token_map_csv(path), IoError);
    write_text_file(path, "");
    CHECK_THROWS_AS(read_token_map_csv(path), IoError);
    CHECK_THROWS_AS(read_token_map_csv(dir.file("absent.csv")), IoError);
}

TEST_CASE("generation traces round-trip through a directory") {
    ModelConfig cfg;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.d_model = 32;
    cfg.vocab = 64;
    cfg.seed = 9;
    cfg.cond_tokens = 4;
    Model model = Model::init(cfg);
    ScaleSchedule schedule = build_schedule(3);
    GenerateOptions options;
    options.capture_snapshots = true;
    GenerationTrace trace = generate(model, PolicyConfig::sliding_window(6), schedule, 17, options);

    TraceMeta meta;
    meta.model = cfg;
    for (int k = 0; k < schedule.num_scales(); ++k)
        meta.schedule_dims.emplace_back(schedule.rows_at(k), schedule.cols_at(k));
    meta.policy = "sliding_window";
    meta.budget_fraction = 0.25;
    meta.prompt_seed = 17;
    meta.weight_checksum = model.weight_checksum();

    TempDir dir;
    const std::string trace_dir = dir.file("trace");
    write_trace(trace_dir, meta, trace);
    CHECK(std::filesystem::exists(trace_dir + "/r_1.csv"));
    CHECK(std::filesystem::exists(trace_dir + "/r_3.csv"));
    CHECK(std::filesystem::exists(trace_dir + "/snapshots.bin"));
    CHECK(std::filesystem::exists(trace_dir + "/stats.json"));

    LoadedTrace loaded = read_trace(trace_dir);
    CHECK(loaded.meta.model.layers == 4);
    CHECK(loaded.meta.model.seed == 9);
    CHECK(loaded.meta.schedule_dims == meta.schedule_dims);
    CHECK(loaded.meta.policy == "sliding_window");
    CHECK(loaded.meta.budget_fraction == 0.25);
    CHECK(loaded.meta.prompt_seed == 17);
    CHECK(loaded.meta.weight_checksum == meta.weight_checksum);
    REQUIRE(loaded.token_maps.size() == 3);
    for (size_t k = 0; k < 3; ++k) CHECK(loaded.token_maps[k].tokens == trace.token_maps[k].tokens);
    CHECK(loaded.snapshots.size() == trace.snapshots.size());
    CHECK(loaded.snapshots.front().weights.data == trace.snapshots.front().weights.data);
    CHECK(loaded.peak_bytes == trace.peak_bytes);
    CHECK(loaded.end_bytes == trace.end_bytes);
    CHECK(loaded.end_retained == trace.end_retained);
    REQUIRE(loaded.cache_stats.size() == trace.cache_stats.size());
    for (size_t i = 0; i < trace.cache_stats.size(); ++i) {
        CHECK(loaded.cache_stats[i].scale == trace.cache_stats[i].scale);
        CHECK(loaded.cache_stats[i].bytes_peak == trace.cache_stats[i].bytes_peak);
        CHECK(loaded.cache_stats[i].bytes_after == trace.cache_stats[i].bytes_after);
        CHECK(loaded.cache_stats[i].retained_after == trace.cache_stats[i].retained_after);
    }
    REQUIRE(loaded.compress_audit.size() == trace.compress_audit.size());
    for (size_t i = 0; i < trace.compress_audit.size(); ++i) {
        CHECK(loaded.compress_audit[i].scale == trace.compress_audit[i].scale);
        CHECK(loaded.compress_audit[i].bytes_after == trace.compress_audit[i].bytes_after);
        REQUIRE(loaded.compress_audit[i].layers.size() == trace.compress_audit[i].layers.size());
        for (size_t l = 0; l < trace.compress_audit[i].layers.size(); ++l) {
            const LayerCompressStats& got = loaded.compress_audit[i].layers[l];
            const LayerCompressStats& want = trace.compress_audit[i].layers[l];
            CHECK(got.layer == want.layer);
            CHECK(got.candidates == want.candidates);
            CHECK(got.retained == want.retained);
            CHECK(got.history_retained == want.history_retained);
            CHECK(got.bound == want.bound);
        }
    }

    CHECK_THROWS_AS(read_trace(dir.file("nowhere")), IoError);
}

TEST_CASE("bench audits round-trip") {
    TempDir dir;
    BenchAudit audit;
    audit.policy = "scalekv";
    audit.budget_fraction = 0.1;
    audit.seed = 12;
    audit.b_uniform = 10;
    audit.token_bytes = 512;
    audit.peak_bytes = 421888;
    audit.end_bytes = 56320;
    audit.end_retained = 110;
    audit.plan_scale_totals = {80, 80, 80};
    CompressResult boundary;
    boundary.scale = 1;
    boundary.bytes_after = 56320;
    LayerCompressStats stats;
    stats.layer = 3;
    stats.candidates = 17;
    stats.retained = 11;
    stats.history_retained = 10;
    stats.bound = 10;
    boundary.layers.push_back(stats);
    audit.boundaries.push_back(boundary);

    const std::string path = dir.file("audit.json");
    save_bench_audit(path, audit);
    BenchAudit loaded = load_bench_audit(path);
    CHECK(loaded.policy == "scalekv");
    CHECK(loaded.budget_fraction == 0.1);
    CHECK(loaded.seed == 12);
    CHECK(loaded.b_uniform == 10);
    CHECK(loaded.token_bytes == 512);
    CHECK(loaded.peak_bytes == 421888);
    CHECK(loaded.end_bytes == 56320);
    CHECK(loaded.end_retained == 110);
    CHECK(loaded.plan_scale_totals == audit.plan_scale_totals);
    REQUIRE(loaded.boundaries.size() == 1);
    CHECK(loaded.boundaries[0].scale == 1);
    REQUIRE(loaded.boundaries[0].layers.size() == 1);
    CHECK(loaded.boundaries[0].layers[0].bound == 10);

    CHECK_THROWS_AS(load_bench_audit(dir.file("absent.json")), IoError);
}
