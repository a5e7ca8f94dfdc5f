#include "scalekv/trace_io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace scalekv {

namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

uint64_t parse_hex64(const std::string& text) {
    return std::stoull(text, nullptr, 16);
}

ojson parse_file(const std::string& path) {
    std::string text = read_text_file(path);
    try {
        return ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed JSON in " + path + ": " + e.what());
    }
}

void require_keys(const ojson& obj, const std::string& path, std::initializer_list<const char*> keys) {
    for (const char* key : keys)
        if (!obj.contains(key)) throw IoError("missing key \"" + std::string(key) + "\" in " + path);
}

void write_le32(std::ofstream& out, int32_t v) {
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((static_cast<uint32_t>(v) >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

int32_t read_le32(std::ifstream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw IoError("unexpected end of snapshot stream");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[i]) << (8 * i);
    return static_cast<int32_t>(v);
}

}  // namespace

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

void save_role_plan(const std::string& path, const AsiTable& table, const RolePlan& roles) {
    ojson doc;
    doc["layers"] = table.num_layers;
    doc["scales"] = table.num_scales;
    doc["K_prime"] = table.topk_history;
    doc["N_d"] = roles.n_drafters;
    doc["epsilon"] = table.epsilon;
    ojson asi = ojson::array();
    ojson z = ojson::array();
    for (int l = 0; l < table.num_layers; ++l)
        for (int k = 0; k < table.num_scales; ++k) {
            asi.push_back({l, k + 1, table.value(l, k)});
            z.push_back({l, k + 1, table.zscore(l, k)});
        }
    doc["asi"] = std::move(asi);
    doc["z"] = std::move(z);
    ojson drafters = ojson::array();
    for (const auto& pair : roles.drafters) drafters.push_back({pair.layer, pair.scale + 1});
    doc["drafters"] = std::move(drafters);
    write_text_file(path, doc.dump(2) + "\n");
}

RolePlanFile load_role_plan(const std::string& path) {
    ojson doc = parse_file(path);
    require_keys(doc, path, {"layers", "scales", "K_prime", "N_d", "epsilon", "asi", "z", "drafters"});

    RolePlanFile file;
    try {
        file.table.num_layers = doc.at("layers").get<int>();
        file.table.num_scales = doc.at("scales").get<int>();
        file.table.topk_history = doc.at("K_prime").get<int>();
        file.table.epsilon = doc.at("epsilon").get<double>();
        if (file.table.num_layers < 1 || file.table.num_scales < 1)
            throw IoError("role plan in " + path + " has empty dimensions");
        size_t cells = static_cast<size_t>(file.table.num_layers) * file.table.num_scales;
        file.table.values.assign(cells, 0.0);
        file.table.zscores.assign(cells, 0.0);
        for (const auto& entry : doc.at("asi"))
            file.table.values[file.table.index(entry.at(0).get<int>(), entry.at(1).get<int>() - 1)] =
                entry.at(2).get<double>();
        for (const auto& entry : doc.at("z"))
            file.table.zscores[file.table.index(entry.at(0).get<int>(), entry.at(1).get<int>() - 1)] =
                entry.at(2).get<double>();

        std::set<std::pair<int, int>> drafter_set;
        for (const auto& entry : doc.at("drafters"))
            drafter_set.emplace(entry.at(0).get<int>(), entry.at(1).get<int>() - 1);

        std::vector<RankedPair> ranked;
        for (int l = 0; l < file.table.num_layers; ++l)
            for (int k = 0; k < file.table.num_scales; ++k)
                ranked.push_back({l, k, file.table.zscore(l, k)});
        std::sort(ranked.begin(), ranked.end(), [](const RankedPair& a, const RankedPair& b) {
            if (a.zscore != b.zscore) return a.zscore < b.zscore;
            if (a.layer != b.layer) return a.layer < b.layer;
            return a.scale < b.scale;
        });

        file.roles.num_layers = file.table.num_layers;
        file.roles.num_scales = file.table.num_scales;
        file.roles.n_drafters = doc.at("N_d").get<int>();
        for (const auto& pair : ranked) {
            if (drafter_set.count({pair.layer, pair.scale}))
                file.roles.drafters.push_back(pair);
            else
                file.roles.refiners.push_back(pair);
        }
        if (static_cast<int>(file.roles.drafters.size()) != static_cast<int>(drafter_set.size()))
            throw IoError("role plan in " + path + " lists drafters outside the table");
        file.roles.source_digest = hex64(file.table.digest());
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed role plan in " + path + ": " + e.what());
    } catch (const IndexError&) {
        throw IoError("role plan in " + path + " indexes outside its dimensions");
    }
    return file;
}

void save_budget_plan(const std::string& path, const BudgetPlan& plan) {
    ojson doc;
    doc["layers"] = plan.num_layers;
    doc["scales"] = plan.num_scales;
    doc["b_uniform"] = plan.b_uniform;
    doc["refiner_base"] = plan.refiner_base;
    doc["decay"] = plan.decay;
    doc["min_budget"] = plan.min_budget;
    ojson budgets = ojson::array();
    for (int l = 0; l < plan.num_layers; ++l)
        for (int k = 0; k < plan.num_scales; ++k) budgets.push_back({l, k + 1, plan.budget(l, k)});
    doc["budgets"] = std::move(budgets);
    ojson drafters = ojson::array();
    ojson refiners = ojson::array();
    for (int k = 0; k < plan.num_scales; ++k) {
        drafters.push_back(plan.drafter_count[static_cast<size_t>(k)]);
        refiners.push_back(plan.refiner_count[static_cast<size_t>(k)]);
    }
    doc["drafter_count"] = std::move(drafters);
    doc["refiner_count"] = std::move(refiners);
    write_text_file(path, doc.dump(2) + "\n");
}

BudgetPlan load_budget_plan(const std::string& path) {
    ojson doc = parse_file(path);
    require_keys(doc, path,
                 {"layers", "scales", "b_uniform", "refiner_base", "decay", "min_budget", "budgets",
                  "drafter_count", "refiner_count"});
    BudgetPlan plan;
    try {
        plan.num_layers = doc.at("layers").get<int>();
        plan.num_scales = doc.at("scales").get<int>();
        plan.b_uniform = doc.at("b_uniform").get<int64_t>();
        plan.refiner_base = doc.at("refiner_base").get<int64_t>();
        plan.decay = doc.at("decay").get<int64_t>();
        plan.min_budget = doc.at("min_budget").get<int64_t>();
        if (plan.num_layers < 1 || plan.num_scales < 1)
            throw IoError("budget plan in " + path + " has empty dimensions");
        plan.budgets.assign(static_cast<size_t>(plan.num_layers) * plan.num_scales, 0);
        for (const auto& entry : doc.at("budgets"))
            plan.budgets[plan.index(entry.at(0).get<int>(), entry.at(1).get<int>() - 1)] =
                entry.at(2).get<int64_t>();
        plan.drafter_count = doc.at("drafter_count").get<std::vector<int>>();
        plan.refiner_count = doc.at("refiner_count").get<std::vector<int>>();
        if (plan.drafter_count.size() != static_cast<size_t>(plan.num_scales) ||
            plan.refiner_count.size() != static_cast<size_t>(plan.num_scales))
            throw IoError("budget plan in " + path + " has malformed role counts");
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed budget plan in " + path + ": " + e.what());
    } catch (const IndexError&) {
        throw IoError("budget plan in " + path + " indexes outside its dimensions");
    }
    return plan;
}

void write_snapshots(const std::string& path, const std::vector<AttentionSnapshot>& snapshots) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& snap : snapshots) {
        write_le32(out, snap.layer);
        write_le32(out, snap.scale + 1);
        write_le32(out, snap.head);
        write_le32(out, snap.weights.rows);
        write_le32(out, snap.weights.cols);
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(snap.weights.data.data()),
                  static_cast<std::streamsize>(snap.weights.data.size() * 4));
    }
    if (!out) throw IoError("write failed for " + path);
}

std::vector<AttentionSnapshot> read_snapshots(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<AttentionSnapshot> snapshots;
    while (in.peek() != std::ifstream::traits_type::eof()) {
        AttentionSnapshot snap;
        snap.layer = read_le32(in);
        snap.scale = read_le32(in) - 1;
        snap.head = read_le32(in);
        int rows = read_le32(in);
        int cols = read_le32(in);
        if (rows < 0 || cols < 0) throw IoError("corrupt snapshot header in " + path);
        snap.weights = Matrix(rows, cols);
        in.read(reinterpret_cast<char*>(snap.weights.data.data()),
                static_cast<std::streamsize>(snap.weights.data.size() * 4));
        if (!in) throw IoError("unexpected end of snapshot stream in " + path);
        snapshots.push_back(std::move(snap));
    }
    return snapshots;
}

TokenMap read_token_map_csv(const std::string& path) {
    std::string text = read_text_file(path);
    std::istringstream lines(text);
    std::vector<std::vector<int32_t>> grid;
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::vector<int32_t> row;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) {
            try {
                row.push_back(static_cast<int32_t>(std::stol(cell)));
            } catch (const std::exception&) {
                throw IoError("malformed token value \"" + cell + "\" in " + path);
            }
        }
        if (!grid.empty() && row.size() != grid.front().size())
            throw IoError("ragged token grid in " + path);
        grid.push_back(std::move(row));
    }
    if (grid.empty()) throw IoError("empty token map in " + path);
    TokenMap map(static_cast<int>(grid.size()), static_cast<int>(grid.front().size()));
    for (int r = 0; r < map.rows; ++r)
        for (int c = 0; c < map.cols; ++c) map.at(r, c) = grid[static_cast<size_t>(r)][static_cast<size_t>(c)];
    return map;
}

namespace {

std::string map_path(const std::string& dir, int scale_one_based) {
    return dir + "/r_" + std::to_string(scale_one_based) + ".csv";
}

ojson compress_to_json(const std::vector<CompressResult>& boundaries) {
    ojson arr = ojson::array();
    for (const auto& result : boundaries) {
        ojson entry;
        entry["scale"] = result.scale + 1;
        ojson layers = ojson::array();
        for (const auto& layer : result.layers) {
            ojson row;
            row["layer"] = layer.layer;
            row["candidates"] = layer.candidates;
            row["retained"] = layer.retained;
            row["history_retained"] = layer.history_retained;
            row["bound"] = layer.bound;
            layers.push_back(std::move(row));
        }
        entry["layers"] = std::move(layers);
        entry["bytes_after"] = result.bytes_after;
        arr.push_back(std::move(entry));
    }
    return arr;
}

std::vector<CompressResult> compress_from_json(const ojson& arr, const std::string& path) {
    std::vector<CompressResult> boundaries;
    for (const auto& entry : arr) {
        require_keys(entry, path, {"scale", "layers", "bytes_after"});
        CompressResult result;
        result.scale = entry.at("scale").get<int>() - 1;
        result.bytes_after = entry.at("bytes_after").get<int64_t>();
        for (const auto& row : entry.at("layers")) {
            require_keys(row, path, {"layer", "candidates", "retained", "history_retained", "bound"});
            LayerCompressStats stats;
            stats.layer = row.at("layer").get<int>();
            stats.candidates = row.at("candidates").get<int64_t>();
            stats.retained = row.at("retained").get<int64_t>();
            stats.history_retained = row.at("history_retained").get<int64_t>();
            stats.bound = row.at("bound").get<int64_t>();
            result.layers.push_back(stats);
        }
        boundaries.push_back(std::move(result));
    }
    return boundaries;
}

}  // namespace

void write_trace(const std::string& dir, const TraceMeta& meta, const GenerationTrace& trace) {
    ensure_dir(dir);
    for (size_t i = 0; i < trace.token_maps.size(); ++i) {
        const TokenMap& map = trace.token_maps[i];
        std::ostringstream csv;
        for (int r = 0; r < map.rows; ++r) {
            for (int c = 0; c < map.cols; ++c) {
                if (c) csv << ',';
                csv << map.at(r, c);
            }
            csv << '\n';
        }
        write_text_file(map_path(dir, static_cast<int>(i) + 1), csv.str());
    }
    if (!trace.snapshots.empty()) write_snapshots(dir + "/snapshots.bin", trace.snapshots);

    ojson doc;
    doc["model"] = {{"layers", meta.model.layers},       {"heads", meta.model.heads},
                    {"d_model", meta.model.d_model},     {"vocab", meta.model.vocab},
                    {"seed", meta.model.seed},           {"cond_tokens", meta.model.cond_tokens}};
    ojson dims = ojson::array();
    for (const auto& [h, w] : meta.schedule_dims) dims.push_back({h, w});
    doc["schedule"] = std::move(dims);
    doc["policy"] = meta.policy;
    doc["budget_fraction"] = meta.budget_fraction;
    doc["prompt_seed"] = meta.prompt_seed;
    doc["weight_checksum"] = hex64(meta.weight_checksum);
    doc["peak_bytes"] = trace.peak_bytes;
    doc["end_bytes"] = trace.end_bytes;
    doc["end_retained"] = trace.end_retained;
    doc["wall_ms"] = trace.wall_ms;
    ojson scales = ojson::array();
    for (const auto& stats : trace.cache_stats) {
        ojson entry;
        entry["scale"] = stats.scale + 1;
        entry["bytes_peak"] = stats.bytes_peak;
        entry["bytes_after"] = stats.bytes_after;
        entry["retained_after"] = stats.retained_after;
        scales.push_back(std::move(entry));
    }
    doc["scales"] = std::move(scales);
    doc["compress"] = compress_to_json(trace.compress_audit);
    write_text_file(dir + "/stats.json", doc.dump(2) + "\n");
}

LoadedTrace read_trace(const std::string& dir) {
    std::string stats_path = dir + "/stats.json";
    ojson doc = parse_file(stats_path);
    require_keys(doc, stats_path,
                 {"model", "schedule", "policy", "budget_fraction", "prompt_seed", "weight_checksum",
                  "peak_bytes", "end_bytes", "end_retained", "wall_ms", "scales", "compress"});

    LoadedTrace trace;
    try {
        const ojson& model = doc.at("model");
        require_keys(model, stats_path, {"layers", "heads", "d_model", "vocab", "seed", "cond_tokens"});
        trace.meta.model.layers = model.at("layers").get<int>();
        trace.meta.model.heads = model.at("heads").get<int>();
        trace.meta.model.d_model = model.at("d_model").get<int>();
        trace.meta.model.vocab = model.at("vocab").get<int>();
        trace.meta.model.seed = model.at("seed").get<uint64_t>();
        trace.meta.model.cond_tokens = model.at("cond_tokens").get<int>();
        for (const auto& pair : doc.at("schedule"))
            trace.meta.schedule_dims.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
        trace.meta.policy = doc.at("policy").get<std::string>();
        trace.meta.budget_fraction = doc.at("budget_fraction").get<double>();
        trace.meta.prompt_seed = doc.at("prompt_seed").get<uint64_t>();
        trace.meta.weight_checksum = parse_hex64(doc.at("weight_checksum").get<std::string>());
        trace.peak_bytes = doc.at("peak_bytes").get<int64_t>();
        trace.end_bytes = doc.at("end_bytes").get<int64_t>();
        trace.end_retained = doc.at("end_retained").get<int64_t>();
        trace.wall_ms = doc.at("wall_ms").get<double>();
        for (const auto& entry : doc.at("scales")) {
            require_keys(entry, stats_path, {"scale", "bytes_peak", "bytes_after", "retained_after"});
            ScaleCacheStats stats;
            stats.scale = entry.at("scale").get<int>() - 1;
            stats.bytes_peak = entry.at("bytes_peak").get<int64_t>();
            stats.bytes_after = entry.at("bytes_after").get<int64_t>();
            stats.retained_after = entry.at("retained_after").get<int64_t>();
            trace.cache_stats.push_back(stats);
        }
        trace.compress_audit = compress_from_json(doc.at("compress"), stats_path);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed stats in " + stats_path + ": " + e.what());
    }

    for (size_t k = 0; k < trace.meta.schedule_dims.size(); ++k)
        trace.token_maps.push_back(read_token_map_csv(map_path(dir, static_cast<int>(k) + 1)));
    std::string snap_path = dir + "/snapshots.bin";
    if (std::filesystem::exists(snap_path)) trace.snapshots = read_snapshots(snap_path);
    return trace;
}

void save_bench_audit(const std::string& path, const BenchAudit& audit) {
    ojson doc;
    doc["policy"] = audit.policy;
    doc["budget_fraction"] = audit.budget_fraction;
    doc["seed"] = audit.seed;
    doc["b_uniform"] = audit.b_uniform;
    doc["token_bytes"] = audit.token_bytes;
    doc["peak_bytes"] = audit.peak_bytes;
    doc["end_bytes"] = audit.end_bytes;
    doc["end_retained"] = audit.end_retained;
    doc["plan_scale_totals"] = audit.plan_scale_totals;
    doc["boundaries"] = compress_to_json(audit.boundaries);
    write_text_file(path, doc.dump(2) + "\n");
}

BenchAudit load_bench_audit(const std::string& path) {
    ojson doc = parse_file(path);
    require_keys(doc, path,
                 {"policy", "budget_fraction", "seed", "b_uniform", "token_bytes", "peak_bytes",
                  "end_bytes", "end_retained", "plan_scale_totals", "boundaries"});
    BenchAudit audit;
    try {
        audit.policy = doc.at("policy").get<std::string>();
        audit.budget_fraction = doc.at("budget_fraction").get<double>();
        audit.seed = doc.at("seed").get<uint64_t>();
        audit.b_uniform = doc.at("b_uniform").get<int64_t>();
        audit.token_bytes = doc.at("token_bytes").get<int64_t>();
        audit.peak_bytes = doc.at("peak_bytes").get<int64_t>();
        audit.end_bytes = doc.at("end_bytes").get<int64_t>();
        audit.end_retained = doc.at("end_retained").get<int64_t>();
        audit.plan_scale_totals = doc.at("plan_scale_totals").get<std::vector<int64_t>>();
        audit.boundaries = compress_from_json(doc.at("boundaries"), path);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed audit in " + path + ": " + e.what());
    }
    return audit;
}

}  // namespace scalekv
