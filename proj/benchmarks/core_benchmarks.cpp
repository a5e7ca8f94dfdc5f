#include <benchmark/benchmark.h>

#include "scalekv/bench.hpp"
#include "scalekv/budget_allocator.hpp"
#include "scalekv/cache_engine.hpp"
#include "scalekv/model.hpp"
#include "scalekv/rng.hpp"

using namespace scalekv;

namespace {

const Model& toy_model() {
    static Model model = [] {
        ModelConfig cfg;
        cfg.layers = 8;
        cfg.heads = 4;
        cfg.d_model = 64;
        cfg.vocab = 256;
        cfg.seed = 0;
        cfg.cond_tokens = 12;
        return Model::init(cfg);
    }();
    return model;
}

const ScaleSchedule& toy_schedule() {
    static ScaleSchedule schedule = build_schedule(6);
    return schedule;
}

RolePlan toy_roles() {
    AsiTable table;
    table.num_layers = 8;
    table.num_scales = 6;
    table.values.resize(48);
    SeededRng rng(7);
    for (double& v : table.values) v = 0.05 + 0.9 * rng.next_unit();
    compute_zscores(table);
    return select_drafters(table, 10, 1);
}

Matrix random_matrix(int rows, int cols, uint64_t seed) {
    Matrix m(rows, cols);
    SeededRng rng(seed);
    for (float& v : m.data) v = rng.next_gaussian();
    return m;
}

}  // namespace

static void BM_full_generation(benchmark::State& state) {
    const Model& model = toy_model();
    PolicyConfig policy = PolicyConfig::full();
    for (auto _ : state) {
        GenerationTrace trace = generate(model, policy, toy_schedule(), 11);
        benchmark::DoNotOptimize(trace.final_logits.data.data());
    }
}
BENCHMARK(BM_full_generation)->Unit(benchmark::kMillisecond);

static void BM_scalekv_generation_10pct(benchmark::State& state) {
    const Model& model = toy_model();
    RolePlan roles = toy_roles();
    BudgetPlan plan = scalekv_plan(roles, 10, 9, 1, 1, toy_schedule(), 12);
    PolicyConfig policy = PolicyConfig::scalekv(roles, plan, 1);
    for (auto _ : state) {
        GenerationTrace trace = generate(model, policy, toy_schedule(), 11);
        benchmark::DoNotOptimize(trace.final_logits.data.data());
    }
}
BENCHMARK(BM_scalekv_generation_10pct)->Unit(benchmark::kMillisecond);

static void BM_importance_scores(benchmark::State& state) {
    const int heads = 4, head_dim = 16;
    const int window = static_cast<int>(state.range(0));
    const int candidates = static_cast<int>(state.range(1));
    Matrix queries = random_matrix(window, heads * head_dim, 1);
    Matrix keys = random_matrix(candidates, heads * head_dim, 2);
    for (auto _ : state) {
        std::vector<double> scores = importance_scores(queries, keys, heads, head_dim);
        benchmark::DoNotOptimize(scores.data());
    }
}
BENCHMARK(BM_importance_scores)->Args({16, 128})->Args({36, 512});

static void BM_select_retained(benchmark::State& state) {
    const int64_t n = state.range(0);
    SeededRng rng(3);
    std::vector<double> scores(static_cast<size_t>(n));
    for (double& s : scores) s = rng.next_unit();
    std::vector<int64_t> candidates(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) candidates[static_cast<size_t>(i)] = i;
    std::vector<int64_t> window = {n - 2, n - 1};
    for (auto _ : state) {
        std::vector<int64_t> kept = select_retained(scores, candidates, n / 10, window);
        benchmark::DoNotOptimize(kept.data());
    }
}
BENCHMARK(BM_select_retained)->Arg(512)->Arg(4096);

static void BM_scalekv_plan(benchmark::State& state) {
    RolePlan roles = toy_roles();
    for (auto _ : state) {
        BudgetPlan plan = scalekv_plan(roles, 10, 9, 1, 1, toy_schedule(), 12);
        benchmark::DoNotOptimize(plan.budgets.data());
    }
}
BENCHMARK(BM_scalekv_plan);

BENCHMARK_MAIN();
