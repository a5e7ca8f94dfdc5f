#pragma once

// Independent full-sequence recomputation used as the correctness oracle for
// cached generation. Instead of scale-by-scale forwards against a KV cache,
// the whole token sequence [conditioning | map 1 | ... | map K] runs through
// the stack in one pass with a block-causal mask: every token attends to its
// own block and to all earlier blocks. A correct cache makes the incremental
// path equivalent to this one; cache indexing, eviction, or partition bugs
// make them diverge. Elementary float operations mirror the engine's
// conventions (float32 state, ascending accumulation order) so agreement is
// expected to machine precision, far inside the 1e-5 gate.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "scalekv/model.hpp"
#include "scalekv/rng.hpp"
#include "scalekv/scale_geometry.hpp"

namespace refmodel {

using scalekv::Matrix;
using scalekv::Model;
using scalekv::ScaleSchedule;
using scalekv::SeededRng;
using scalekv::TokenMap;

inline void ref_layer_norm_row(const float* x, int d, const std::vector<float>& gain,
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
    float inv = 1.0f / std::sqrt(var + 1e-5f);
    for (int i = 0; i < d; ++i)
        out[i] = (x[i] - mean) * inv * gain[static_cast<size_t>(i)] + bias[static_cast<size_t>(i)];
}

inline Matrix ref_layer_norm(const Matrix& x, const std::vector<float>& gain,
                             const std::vector<float>& bias) {
    Matrix out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r)
        ref_layer_norm_row(x.row(r).data(), x.cols, gain, bias, out.row(r).data());
    return out;
}

inline Matrix ref_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            float acc = 0.0f;
            for (int k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    }
    return c;
}

inline float ref_gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.7071067811865475f)); }

// Conditioning block rebuilt from the prompt seed: seeded gaussians plus a
// 1D sinusoidal position code.
inline Matrix ref_conditioning(const Model& model, uint64_t prompt_seed) {
    const int d = model.config().d_model;
    const int n = model.config().cond_tokens;
    Matrix emb(n, d);
    SeededRng rng(prompt_seed ^ 0xc0d1710e5ULL);
    for (auto& v : emb.data) v = rng.next_gaussian();
    for (int t = 0; t < n; ++t) {
        float* row = emb.row(t).data();
        for (int i = 0; i < d; i += 2) {
            double angle = static_cast<double>(t + 1) / std::pow(10000.0, static_cast<double>(i) / d);
            row[i] += static_cast<float>(std::sin(angle));
            if (i + 1 < d) row[i + 1] += static_cast<float>(std::cos(angle));
        }
    }
    return emb;
}

inline TokenMap ref_upsample(const TokenMap& prev, int rows, int cols) {
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

// Embeddings of one map: token embedding + shared scale code + interleaved
// 2D position code over normalized cell coordinates.
inline Matrix ref_scale_embeddings(const Model& model, const ScaleSchedule& schedule, int scale,
                                   const TokenMap& input) {
    const int d = model.config().d_model;
    const int rows = schedule.rows_at(scale);
    const int cols = schedule.cols_at(scale);
    Matrix emb(rows * cols, d);

    std::vector<float> scale_pe(static_cast<size_t>(d), 0.0f);
    for (int i = 0; i < d; i += 2) {
        double angle = static_cast<double>(scale + 1) / std::pow(10000.0, static_cast<double>(i) / d);
        scale_pe[static_cast<size_t>(i)] = static_cast<float>(std::sin(angle));
        if (i + 1 < d) scale_pe[static_cast<size_t>(i + 1)] = static_cast<float>(std::cos(angle));
    }

    constexpr double kTwoPi = 6.283185307179586;
    for (int r = 0; r < rows; ++r) {
        double u = (r + 0.5) / rows;
        for (int c = 0; c < cols; ++c) {
            double v = (c + 0.5) / cols;
            float* row = emb.row(r * cols + c).data();
            const float* tok = model.token_embedding().row(input.at(r, c)).data();
            for (int i = 0; i < d; ++i) row[i] = tok[i] + scale_pe[static_cast<size_t>(i)];
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

// Recomputes the logits of every scale with no cache at all, teacher-forced
// on the generated maps (inputs to scale k are the upsampled map k-1, exactly
// as during generation). Returns one logits matrix per scale.
inline std::vector<Matrix> recompute_all_logits(const Model& model, const ScaleSchedule& schedule,
                                                uint64_t prompt_seed,
                                                const std::vector<TokenMap>& maps) {
    const auto& cfg = model.config();
    const int d = cfg.d_model;
    const int dk = cfg.head_dim();
    const int K = schedule.num_scales();
    const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(dk));

    // Row layout: conditioning block, then each scale's map in order.
    std::vector<int64_t> block_start;  // first row of each scale block
    int64_t total = cfg.cond_tokens;
    for (int k = 0; k < K; ++k) {
        block_start.push_back(total);
        total += schedule.tokens_at(k);
    }

    Matrix x(static_cast<int>(total), d);
    auto copy_rows = [&x, d](const Matrix& src, int64_t at) {
        for (int r = 0; r < src.rows; ++r)
            for (int i = 0; i < d; ++i) x.at(static_cast<int>(at + r), i) = src.at(r, i);
    };
    if (cfg.cond_tokens > 0) copy_rows(ref_conditioning(model, prompt_seed), 0);
    for (int k = 0; k < K; ++k) {
        TokenMap input = (k == 0)
                             ? TokenMap(schedule.rows_at(0), schedule.cols_at(0))
                             : ref_upsample(maps[static_cast<size_t>(k - 1)], schedule.rows_at(k),
                                            schedule.cols_at(k));
        copy_rows(ref_scale_embeddings(model, schedule, k, input), block_start[static_cast<size_t>(k)]);
    }

    // Visible prefix per row: everything up to the end of the row's block.
    std::vector<int64_t> visible(static_cast<size_t>(total));
    for (int64_t r = 0; r < cfg.cond_tokens; ++r) visible[static_cast<size_t>(r)] = cfg.cond_tokens;
    for (int k = 0; k < K; ++k) {
        int64_t end = block_start[static_cast<size_t>(k)] + schedule.tokens_at(k);
        for (int64_t r = block_start[static_cast<size_t>(k)]; r < end; ++r)
            visible[static_cast<size_t>(r)] = end;
    }

    std::vector<float> logits_row(static_cast<size_t>(total));
    for (int l = 0; l < cfg.layers; ++l) {
        const auto& w = model.layer(l);
        Matrix normed = ref_layer_norm(x, w.ln1_gain, w.ln1_bias);
        Matrix q = ref_matmul(normed, w.wq);
        for (auto& v : q.data) v *= w.attn_gain;
        Matrix key = ref_matmul(normed, w.wk);
        Matrix val = ref_matmul(normed, w.wv);

        Matrix context(static_cast<int>(total), d);
        for (int h = 0; h < cfg.heads; ++h) {
            const int off = h * dk;
            for (int64_t i = 0; i < total; ++i) {
                const int64_t vis = visible[static_cast<size_t>(i)];
                const float* qi = q.row(static_cast<int>(i)).data() + off;
                float max_logit = -std::numeric_limits<float>::infinity();
                for (int64_t j = 0; j < vis; ++j) {
                    const float* kj = key.row(static_cast<int>(j)).data() + off;
                    float dot = 0.0f;
                    for (int z = 0; z < dk; ++z) dot += qi[z] * kj[z];
                    logits_row[static_cast<size_t>(j)] = dot * inv_sqrt_dk;
                    max_logit = std::max(max_logit, logits_row[static_cast<size_t>(j)]);
                }
                float denom = 0.0f;
                for (int64_t j = 0; j < vis; ++j) {
                    float e = std::exp(logits_row[static_cast<size_t>(j)] - max_logit);
                    logits_row[static_cast<size_t>(j)] = e;
                    denom += e;
                }
                float* ctx = context.row(static_cast<int>(i)).data() + off;
                for (int64_t j = 0; j < vis; ++j) {
                    float prob = logits_row[static_cast<size_t>(j)] / denom;
                    const float* vj = val.row(static_cast<int>(j)).data() + off;
                    for (int z = 0; z < dk; ++z) ctx[z] += prob * vj[z];
                }
            }
        }

        Matrix attn_out = ref_matmul(context, w.wo);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_out.data[i];

        Matrix normed2 = ref_layer_norm(x, w.ln2_gain, w.ln2_bias);
        Matrix mid = ref_matmul(normed2, w.w_mlp_in);
        for (auto& v : mid.data) v = ref_gelu(v);
        Matrix mlp_out = ref_matmul(mid, w.w_mlp_out);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += mlp_out.data[i];
    }

    Matrix final_norm = ref_layer_norm(x, model.final_ln_gain(), model.final_ln_bias());
    std::vector<Matrix> out;
    out.reserve(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k) {
        const int n = static_cast<int>(schedule.tokens_at(k));
        Matrix block(n, d);
        for (int r = 0; r < n; ++r)
            for (int i = 0; i < d; ++i)
                block.at(r, i) = final_norm.at(static_cast<int>(block_start[static_cast<size_t>(k)] + r), i);
        out.push_back(ref_matmul(block, model.output_head()));
    }
    return out;
}

}  // namespace refmodel
