#include "scalekv/attention_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "scalekv/rng.hpp"

namespace scalekv {

namespace {

// Analysis ops only need the column split; the query-row count is free so
// hand-built matrices with any number of rows can be scored. Model-produced
// snapshots additionally satisfy rows == |current|, but that is a trace
// invariant enforced where snapshots are captured, not here.
void check_dims(const AttentionSnapshot& snapshot, const SequencePartition& part) {
    if (part.current_len < 1) throw ShapeError("partition has an empty current range");
    if (snapshot.weights.cols != part.total_len())
        throw ShapeError("snapshot cols do not match history + current length");
}

}  // namespace

uint64_t AsiTable::digest() const {
    std::vector<unsigned char> bytes;
    bytes.reserve(values.size() * sizeof(double) + 16);
    auto push = [&bytes](const void* p, size_t n) {
        const auto* raw = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), raw, raw + n);
    };
    push(&num_layers, sizeof(num_layers));
    push(&num_scales, sizeof(num_scales));
    push(&topk_history, sizeof(topk_history));
    for (double v : values) push(&v, sizeof(v));
    return fnv1a64(bytes);
}

bool RolePlan::is_drafter(int layer, int scale) const {
    for (const auto& p : drafters)
        if (p.layer == layer && p.scale == scale) return true;
    return false;
}

double current_attention_ratio(const AttentionSnapshot& snapshot, const SequencePartition& part) {
    check_dims(snapshot, part);
    const Matrix& w = snapshot.weights;
    if (w.rows == 0) throw ShapeError("snapshot has no query rows");
    double total = 0.0;
    for (int r = 0; r < w.rows; ++r) {
        double mass = 0.0;
        for (int64_t c = part.history_len; c < part.total_len(); ++c)
            mass += w.at(r, static_cast<int>(c));
        total += mass;
    }
    return total / w.rows;
}

double history_topk_ratio(const AttentionSnapshot& snapshot, const SequencePartition& part, int topk) {
    check_dims(snapshot, part);
    if (topk < 1) throw ConfigError("topk must be positive");
    if (part.history_len == 0) return 1.0;
    const Matrix& w = snapshot.weights;
    if (w.rows == 0) throw ShapeError("snapshot has no query rows");
    std::vector<double> hist(static_cast<size_t>(part.history_len));
    double total = 0.0;
    for (int r = 0; r < w.rows; ++r) {
        for (int64_t c = 0; c < part.history_len; ++c) hist[static_cast<size_t>(c)] = w.at(r, static_cast<int>(c));
        size_t take = std::min<size_t>(static_cast<size_t>(topk), hist.size());
        std::partial_sort(hist.begin(), hist.begin() + take, hist.end(), std::greater<double>());
        double sum = 0.0;
        for (size_t i = 0; i < take; ++i) sum += hist[i];
        total += sum;
    }
    return total / w.rows;
}

double attention_selectivity_index(const AttentionSnapshot& snapshot, const SequencePartition& part,
                                   int topk) {
    return current_attention_ratio(snapshot, part) * history_topk_ratio(snapshot, part, topk);
}

std::vector<double> normalized_current_attention_rows(const AttentionSnapshot& snapshot,
                                                      const SequencePartition& part) {
    check_dims(snapshot, part);
    const Matrix& w = snapshot.weights;
    std::vector<double> rows(static_cast<size_t>(w.rows));
    // Rows are normalized, so per-token average mass over the whole visible
    // sequence is 1 / total_len and the statistic reduces to
    // current_mass * total_len / current_len.
    double factor = static_cast<double>(part.total_len()) / static_cast<double>(part.current_len);
    for (int r = 0; r < w.rows; ++r) {
        double mass = 0.0;
        for (int64_t c = part.history_len; c < part.total_len(); ++c)
            mass += w.at(r, static_cast<int>(c));
        rows[static_cast<size_t>(r)] = mass * factor;
    }
    return rows;
}

double normalized_current_attention(const AttentionSnapshot& snapshot, const SequencePartition& part) {
    std::vector<double> rows = normalized_current_attention_rows(snapshot, part);
    if (rows.empty()) throw ShapeError("snapshot has no query rows");
    double total = 0.0;
    for (double v : rows) total += v;
    return total / static_cast<double>(rows.size());
}

void compute_zscores(AsiTable& table) {
    if (table.num_layers < 1 || table.num_scales < 1) throw ShapeError("asi table is empty");
    if (table.values.size() != static_cast<size_t>(table.num_layers) * table.num_scales)
        throw ShapeError("asi table values have the wrong size");
    table.zscores.assign(table.values.size(), 0.0);
    for (int k = 0; k < table.num_scales; ++k) {
        double mean = 0.0;
        for (int l = 0; l < table.num_layers; ++l) mean += table.value(l, k);
        mean /= table.num_layers;
        double var = 0.0;
        for (int l = 0; l < table.num_layers; ++l) {
            double d = table.value(l, k) - mean;
            var += d * d;
        }
        double std = std::sqrt(var / table.num_layers);
        for (int l = 0; l < table.num_layers; ++l)
            table.zscores[table.index(l, k)] = (table.value(l, k) - mean) / (std + table.epsilon);
    }
}

RolePlan select_drafters(const AsiTable& table, int n_drafters, int min_drafter_scale) {
    if (table.zscores.size() != table.values.size())
        throw SequencingError("z-scores missing; run compute_zscores first");
    int eligible = table.num_layers * (table.num_scales - std::max(0, min_drafter_scale));
    if (n_drafters < 0 || n_drafters > table.num_layers * table.num_scales)
        throw ConfigError("drafter count out of range");
    if (n_drafters > eligible)
        throw ConfigError("drafter count exceeds eligible (layer, scale) pairs");

    std::vector<RankedPair> pairs;
    pairs.reserve(table.values.size());
    for (int l = 0; l < table.num_layers; ++l)
        for (int k = 0; k < table.num_scales; ++k)
            pairs.push_back({l, k, table.zscore(l, k)});
    std::sort(pairs.begin(), pairs.end(), [](const RankedPair& a, const RankedPair& b) {
        if (a.zscore != b.zscore) return a.zscore < b.zscore;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.scale < b.scale;
    });

    RolePlan plan;
    plan.num_layers = table.num_layers;
    plan.num_scales = table.num_scales;
    plan.n_drafters = n_drafters;
    char digest[32];
    std::snprintf(digest, sizeof(digest), "%016llx", static_cast<unsigned long long>(table.digest()));
    plan.source_digest = digest;
    int taken = 0;
    for (const auto& p : pairs) {
        if (taken < n_drafters && p.scale >= min_drafter_scale) {
            plan.drafters.push_back(p);
            ++taken;
        } else {
            plan.refiners.push_back(p);
        }
    }
    return plan;
}

}  // namespace scalekv
