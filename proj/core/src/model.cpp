#include "scalekv/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "scalekv/rng.hpp"

namespace scalekv {

namespace {

constexpr float kLnEpsilon = 1e-5f;
constexpr double kTwoPi = 6.283185307179586;

void layer_norm_row(const float* x, int d, const std::vector<float>& gain,
                    const std::vector<float>& bias, float* out) {
    float mean = 0.0f;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (int i = 0; i < d; ++i) {
        float c = x[i] - mean;
        var += c * c;
    }
    var /= static_cast<float>(d);
    float inv = 1.0f / std::sqrt(var + kLnEpsilon);
    for (int i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv * gain[static_cast<size_t>(i)] + bias[static_cast<size_t>(i)];
}

Matrix layer_norm(const Matrix& x, const std::vector<float>& gain, const std::vector<float>& bias) {
    Matrix out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) layer_norm_row(x.row(r).data(), x.cols, gain, bias, out.row(r).data());
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ShapeError("matmul inner dims disagree");
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const float* arow = a.row(i).data();
        float* crow = c.row(i).data();
        for (int k = 0; k < a.cols; ++k) {
            float av = arow[k];
            const float* brow = b.row(k).data();
            for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.7071067811865475f)); }

Matrix init_matrix(SeededRng& rng, int rows, int cols, float sigma) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = rng.next_gaussian() * sigma;
    return m;
}

void hash_combine(uint64_t& h, uint64_t v) { h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2); }

}  // namespace

void ModelConfig::validate() const {
    if (layers < 2) throw ConfigError("model needs at least two layers");
    if (heads < 1) throw ConfigError("model needs at least one head");
    if (d_model < 1 || d_model % heads != 0) throw ConfigError("d_model must be a positive multiple of heads");
    if (vocab < 2) throw ConfigError("vocab must be at least 2");
    if (cond_tokens < 0) throw ConfigError("cond_tokens must be non-negative");
}

Model Model::init(const ModelConfig& config) {
    config.validate();
    Model model;
    model.config_ = config;
    SeededRng rng(config.seed);

    const int d = config.d_model;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
    const float residual_scale = 1.0f / std::sqrt(2.0f * static_cast<float>(config.layers));

    model.token_embedding_ = init_matrix(rng, config.vocab, d, 1.0f);
    model.output_head_ = init_matrix(rng, d, config.vocab, inv_sqrt_d);
    model.final_ln_gain_.assign(static_cast<size_t>(d), 1.0f);
    model.final_ln_bias_.assign(static_cast<size_t>(d), 0.0f);

    model.layers_.resize(static_cast<size_t>(config.layers));
    for (auto& layer : model.layers_) {
        layer.ln1_gain.assign(static_cast<size_t>(d), 1.0f);
        layer.ln1_bias.assign(static_cast<size_t>(d), 0.0f);
        layer.ln2_gain.assign(static_cast<size_t>(d), 1.0f);
        layer.ln2_bias.assign(static_cast<size_t>(d), 0.0f);
        layer.wq = init_matrix(rng, d, d, inv_sqrt_d);
        layer.wk = init_matrix(rng, d, d, inv_sqrt_d);
        layer.wv = init_matrix(rng, d, d, inv_sqrt_d);
        layer.wo = init_matrix(rng, d, d, inv_sqrt_d * residual_scale);
        layer.w_mlp_in = init_matrix(rng, d, 2 * d, inv_sqrt_d);
        layer.w_mlp_out = init_matrix(rng, 2 * d, d,
                                      residual_scale / std::sqrt(2.0f * static_cast<float>(d)));
        // Log-uniform in [0.25, 8.0]: some layers attend diffusely, some sharply.
        double u = rng.next_unit();
        layer.attn_gain = static_cast<float>(std::exp(std::log(0.25) + u * (std::log(8.0) - std::log(0.25))));
    }
    return model;
}

uint64_t Model::weight_checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    hash_combine(h, checksum_floats(token_embedding_.data));
    hash_combine(h, checksum_floats(output_head_.data));
    for (const auto& layer : layers_) {
        hash_combine(h, checksum_floats(layer.wq.data));
        hash_combine(h, checksum_floats(layer.wk.data));
        hash_combine(h, checksum_floats(layer.wv.data));
        hash_combine(h, checksum_floats(layer.wo.data));
        hash_combine(h, checksum_floats(layer.w_mlp_in.data));
        hash_combine(h, checksum_floats(layer.w_mlp_out.data));
        float gain = layer.attn_gain;
        hash_combine(h, checksum_floats({&gain, 1}));
    }
    return h;
}

Matrix Model::conditioning_embeddings(uint64_t prompt_seed) const {
    const int d = config_.d_model;
    Matrix emb(config_.cond_tokens, d);
    SeededRng rng(prompt_seed ^ 0xc0d1710e5ULL);
    for (auto& v : emb.data) v = rng.next_gaussian();
    for (int t = 0; t < emb.rows; ++t) {
        float* row = emb.row(t).data();
        for (int i = 0; i < d; i += 2) {
            double angle = static_cast<double>(t + 1) / std::pow(10000.0, static_cast<double>(i) / d);
            row[i] += static_cast<float>(std::sin(angle));
            if (i + 1 < d) row[i + 1] += static_cast<float>(std::cos(angle));
        }
    }
    return emb;
}

Matrix Model::scale_input_embeddings(const ScaleSchedule& schedule, int scale,
                                     const TokenMap& input_tokens) const {
    const int rows = schedule.rows_at(scale);
    const int cols = schedule.cols_at(scale);
    if (input_tokens.rows != rows || input_tokens.cols != cols)
        throw ShapeError("input map does not match the scale grid");
    const int d = config_.d_model;
    Matrix emb(rows * cols, d);

    // Scale encoding shared by every token of the map.
    std::vector<float> scale_pe(static_cast<size_t>(d), 0.0f);
    for (int i = 0; i < d; i += 2) {
        double angle = static_cast<double>(scale + 1) / std::pow(10000.0, static_cast<double>(i) / d);
        scale_pe[static_cast<size_t>(i)] = static_cast<float>(std::sin(angle));
        if (i + 1 < d) scale_pe[static_cast<size_t>(i + 1)] = static_cast<float>(std::cos(angle));
    }

    for (int r = 0; r < rows; ++r) {
        double u = (r + 0.5) / rows;
        for (int c = 0; c < cols; ++c) {
            double v = (c + 0.5) / cols;
            int32_t tok = input_tokens.at(r, c);
            if (tok < 0 || tok >= config_.vocab) throw IndexError("token id out of vocab range");
            float* row = emb.row(r * cols + c).data();
            const float* tok_row = token_embedding_.row(tok).data();
            for (int i = 0; i < d; ++i) row[i] = tok_row[i] + scale_pe[static_cast<size_t>(i)];
            // Interleaved 2D positional encoding over normalized coordinates.
            for (int i = 0; i + 3 < d; i += 4) {
                double freq = kTwoPi * (1.0 + i / 4);
                row[i] += static_cast<float>(std::sin(freq * u));
                row[i + 1] += static_cast<float>(std::cos(freq * u));
                row[i + 2] += static_cast<float>(std::sin(freq * v));
                row[i + 3] += static_cast<float>(std::cos(freq * v));
            }
        }
    }
    return emb;
}

namespace {

struct StackOutput {
    Matrix hidden;
    ScaleStates states;
    std::vector<AttentionSnapshot> snapshots;
};

// Runs the block stack over one token map (or the conditioning block) with
// the cache as per-layer history. Bidirectional inside the map: every query
// row sees all history columns plus all current columns.
StackOutput run_stack(const Model& model, const KvCache* cache, const Matrix& input, int scale,
                      bool capture_snapshots) {
    const ModelConfig& cfg = model.config();
    const int d = cfg.d_model;
    const int dk = cfg.head_dim();
    const int n = input.rows;
    const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(dk));

    StackOutput out;
    out.hidden = input;
    out.states.queries.reserve(static_cast<size_t>(cfg.layers));
    out.states.keys.reserve(static_cast<size_t>(cfg.layers));
    out.states.values.reserve(static_cast<size_t>(cfg.layers));

    std::vector<float> weights_row;
    for (int l = 0; l < cfg.layers; ++l) {
        const LayerWeights& w = model.layer(l);
        Matrix normed = layer_norm(out.hidden, w.ln1_gain, w.ln1_bias);
        Matrix q = matmul(normed, w.wq);
        for (auto& v : q.data) v *= w.attn_gain;
        Matrix k = matmul(normed, w.wk);
        Matrix v = matmul(normed, w.wv);

        const Matrix* hist_k = nullptr;
        const Matrix* hist_v = nullptr;
        int hist = 0;
        if (cache != nullptr && cache->retained(l) > 0) {
            hist_k = &cache->keys(l);
            hist_v = &cache->values(l);
            hist = hist_k->rows;
        }
        const int total = hist + n;

        Matrix context(n, d);
        std::vector<Matrix> head_snaps;
        if (capture_snapshots) head_snaps.assign(static_cast<size_t>(cfg.heads), Matrix(n, total));

        weights_row.resize(static_cast<size_t>(total));
        for (int h = 0; h < cfg.heads; ++h) {
            const int off = h * dk;
            for (int i = 0; i < n; ++i) {
                const float* qi = q.row(i).data() + off;
                float max_logit = -std::numeric_limits<float>::infinity();
                for (int j = 0; j < total; ++j) {
                    const float* kj = (j < hist ? hist_k->row(j).data() : k.row(j - hist).data()) + off;
                    float dot = 0.0f;
                    for (int x = 0; x < dk; ++x) dot += qi[x] * kj[x];
                    weights_row[static_cast<size_t>(j)] = dot * inv_sqrt_dk;
                    max_logit = std::max(max_logit, weights_row[static_cast<size_t>(j)]);
                }
                float denom = 0.0f;
                for (int j = 0; j < total; ++j) {
                    float e = std::exp(weights_row[static_cast<size_t>(j)] - max_logit);
                    weights_row[static_cast<size_t>(j)] = e;
                    denom += e;
                }
                float* ctx = context.row(i).data() + off;
                for (int j = 0; j < total; ++j) {
                    float prob = weights_row[static_cast<size_t>(j)] / denom;
                    if (capture_snapshots) head_snaps[static_cast<size_t>(h)].at(i, j) = prob;
                    const float* vj = (j < hist ? hist_v->row(j).data() : v.row(j - hist).data()) + off;
                    for (int x = 0; x < dk; ++x) ctx[x] += prob * vj[x];
                }
            }
        }

        Matrix attn_out = matmul(context, w.wo);
        for (size_t i = 0; i < out.hidden.data.size(); ++i) out.hidden.data[i] += attn_out.data[i];

        Matrix normed2 = layer_norm(out.hidden, w.ln2_gain, w.ln2_bias);
        Matrix mid = matmul(normed2, w.w_mlp_in);
        for (auto& x : mid.data) x = gelu(x);
        Matrix mlp_out = matmul(mid, w.w_mlp_out);
        for (size_t i = 0; i < out.hidden.data.size(); ++i) out.hidden.data[i] += mlp_out.data[i];

        out.states.queries.push_back(std::move(q));
        out.states.keys.push_back(std::move(k));
        out.states.values.push_back(std::move(v));
        if (capture_snapshots) {
            for (int h = 0; h < cfg.heads; ++h) {
                AttentionSnapshot snap;
                snap.layer = l;
                snap.scale = scale;
                snap.head = h;
                snap.weights = std::move(head_snaps[static_cast<size_t>(h)]);
                out.snapshots.push_back(std::move(snap));
            }
        }
    }
    return out;
}

TokenMap argmax_map(const Matrix& logits, int rows, int cols) {
    TokenMap map(rows, cols);
    for (int r = 0; r < logits.rows; ++r) {
        const float* row = logits.row(r).data();
        int best = 0;
        for (int j = 1; j < logits.cols; ++j)
            if (row[j] > row[best]) best = j;
        map.tokens[static_cast<size_t>(r)] = best;
    }
    return map;
}

}  // namespace

ForwardResult forward_scale(const Model& model, const KvCache& cache, int scale,
                            const TokenMap& input_tokens, const ScaleSchedule& schedule,
                            bool capture_snapshots) {
    if (scale < 0 || scale >= schedule.num_scales()) throw IndexError("scale index out of range");
    if (cache.next_scale() != scale)
        throw SequencingError("cache is not positioned at the requested scale");
    if (cache.num_layers() != model.config().layers)
        throw ShapeError("cache layer count does not match the model");

    Matrix input = model.scale_input_embeddings(schedule, scale, input_tokens);
    StackOutput stack = run_stack(model, &cache, input, scale, capture_snapshots);

    Matrix final_norm = layer_norm(stack.hidden, model.final_ln_gain(), model.final_ln_bias());
    ForwardResult result;
    result.logits = matmul(final_norm, model.output_head());
    result.states = std::move(stack.states);
    result.snapshots = std::move(stack.snapshots);
    return result;
}

TokenMap upsample_nearest(const TokenMap& prev, int rows, int cols) {
    if (prev.rows < 1 || prev.cols < 1) throw ShapeError("cannot upsample an empty map");
    TokenMap out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        int pr = static_cast<int>(static_cast<int64_t>(r) * prev.rows / rows);
        for (int c = 0; c < cols; ++c) {
            int pc = static_cast<int>(static_cast<int64_t>(c) * prev.cols / cols);
            out.at(r, c) = prev.at(pr, pc);
        }
    }
    return out;
}

GenerationTrace generate(const Model& model, const PolicyConfig& policy, const ScaleSchedule& schedule,
                         uint64_t prompt_seed, const GenerateOptions& options) {
    const ModelConfig& cfg = model.config();
    policy.validate(schedule);
    if (!policy.budget_plan.budgets.empty() && policy.budget_plan.num_layers != cfg.layers)
        throw ShapeError("budget plan layer count does not match the model");

    auto t0 = std::chrono::steady_clock::now();
    GenerationTrace trace;
    KvCache cache(cfg.layers, cfg.heads, cfg.head_dim(), policy.bytes_per_element);

    if (cfg.cond_tokens > 0) {
        Matrix cond = model.conditioning_embeddings(prompt_seed);
        StackOutput pre = run_stack(model, &cache, cond, -1, false);
        for (int l = 0; l < cfg.layers; ++l)
            cache.append(l, 0, pre.states.keys[static_cast<size_t>(l)],
                         pre.states.values[static_cast<size_t>(l)]);
    }
    trace.peak_bytes = cache_bytes(cache);

    TokenMap prev;
    for (int k = 0; k < schedule.num_scales(); ++k) {
        const int rows = schedule.rows_at(k);
        const int cols = schedule.cols_at(k);
        TokenMap input = (k == 0) ? TokenMap(rows, cols) : upsample_nearest(prev, rows, cols);

        ForwardResult fwd = forward_scale(model, cache, k, input, schedule, options.capture_snapshots);

        const int64_t base = cfg.cond_tokens + schedule.prefix_tokens(k);
        for (int l = 0; l < cfg.layers; ++l)
            cache.append(l, base, fwd.states.keys[static_cast<size_t>(l)],
                         fwd.states.values[static_cast<size_t>(l)]);
        cache.advance_scale();
        int64_t bytes_peak = cache_bytes(cache);
        trace.peak_bytes = std::max(trace.peak_bytes, bytes_peak);

        TokenMap map = argmax_map(fwd.logits, rows, cols);
        trace.token_maps.push_back(map);
        if (options.capture_snapshots)
            for (auto& s : fwd.snapshots) trace.snapshots.push_back(std::move(s));
        if (options.keep_scale_logits) trace.scale_logits.push_back(fwd.logits);
        if (k == schedule.num_scales() - 1) trace.final_logits = std::move(fwd.logits);

        CompressResult audit;
        if (policy.uses_observation_window()) {
            int64_t cells = static_cast<int64_t>(rows) * cols;
            int patches = static_cast<int>(std::min<int64_t>(policy.observation_window, cells));
            std::vector<int64_t> window_local = observation_window(rows, cols, patches);
            std::vector<Matrix> window_q(static_cast<size_t>(cfg.layers));
            for (int l = 0; l < cfg.layers; ++l) {
                const Matrix& q = fwd.states.queries[static_cast<size_t>(l)];
                Matrix wq(static_cast<int>(window_local.size()), q.cols);
                for (size_t i = 0; i < window_local.size(); ++i)
                    std::copy_n(q.row(static_cast<int>(window_local[i])).data(), q.cols,
                                wq.row(static_cast<int>(i)).data());
                window_q[static_cast<size_t>(l)] = std::move(wq);
            }
            audit = end_of_scale_compress(cache, policy, schedule, k, cfg.cond_tokens, base,
                                          window_local, window_q);
        } else {
            audit = apply_baseline(cache, policy, k);
        }

        ScaleCacheStats stats;
        stats.scale = k;
        stats.bytes_peak = bytes_peak;
        stats.bytes_after = audit.bytes_after;
        stats.retained_after = cache.total_retained();
        trace.cache_stats.push_back(stats);
        trace.compress_audit.push_back(std::move(audit));
        prev = std::move(map);
    }

    trace.end_bytes = cache_bytes(cache);
    trace.end_retained = cache.total_retained();
    trace.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

}  // namespace scalekv
