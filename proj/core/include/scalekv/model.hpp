#pragma once

#include <cstdint>
#include <vector>

#include "scalekv/attention_snapshot.hpp"
#include "scalekv/cache_engine.hpp"
#include "scalekv/matrix.hpp"
#include "scalekv/scale_geometry.hpp"

namespace scalekv {

// Deterministic toy next-scale-prediction transformer. Weights are random
// but seeded, so identical configs replay bit for bit; prompts enter as a
// block of seeded conditioning embeddings that the cache treats as ordinary
// history. Attention is bidirectional inside a token map and causal across
// maps, which is what makes per-scale KV caching exact.
struct ModelConfig {
    int layers = 8;
    int heads = 4;
    int d_model = 64;
    int vocab = 256;
    uint64_t seed = 0;
    int cond_tokens = 12;

    int head_dim() const { return d_model / heads; }
    void validate() const;
};

struct TokenMap {
    int rows = 0;
    int cols = 0;
    std::vector<int32_t> tokens;

    TokenMap() = default;
    TokenMap(int r, int c) : rows(r), cols(c), tokens(static_cast<size_t>(r) * c, 0) {}

    int32_t at(int r, int c) const { return tokens[static_cast<size_t>(r) * cols + c]; }
    int32_t& at(int r, int c) { return tokens[static_cast<size_t>(r) * cols + c]; }
    int64_t size() const { return static_cast<int64_t>(rows) * cols; }
};

struct LayerWeights {
    std::vector<float> ln1_gain, ln1_bias;
    std::vector<float> ln2_gain, ln2_bias;
    Matrix wq, wk, wv, wo;          // d_model x d_model
    Matrix w_mlp_in, w_mlp_out;     // d_model x 2*d_model, 2*d_model x d_model
    // Per-layer query gain. Layers genuinely differ in attention sharpness,
    // which gives the selectivity analysis real structure to find.
    float attn_gain = 1.0f;
};

class Model {
  public:
    static Model init(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const LayerWeights& layer(int l) const { return layers_[static_cast<size_t>(l)]; }
    const Matrix& token_embedding() const { return token_embedding_; }
    const Matrix& output_head() const { return output_head_; }
    const std::vector<float>& final_ln_gain() const { return final_ln_gain_; }
    const std::vector<float>& final_ln_bias() const { return final_ln_bias_; }

    uint64_t weight_checksum() const;

    // Prompt block: cond_tokens seeded embeddings plus positional encoding.
    Matrix conditioning_embeddings(uint64_t prompt_seed) const;

    // Input embeddings for one scale: token embedding of the (upsampled)
    // previous map plus 2D positional and scale encodings.
    Matrix scale_input_embeddings(const ScaleSchedule& schedule, int scale,
                                  const TokenMap& input_tokens) const;

  private:
    ModelConfig config_;
    std::vector<LayerWeights> layers_;
    Matrix token_embedding_;  // vocab x d_model
    Matrix output_head_;      // d_model x vocab
    std::vector<float> final_ln_gain_, final_ln_bias_;
};

// Per-layer projected states of the current map (rows = map tokens). Queries
// carry the layer's attention gain already folded in, so downstream scoring
// reproduces the forward softmax exactly.
struct ScaleStates {
    std::vector<Matrix> queries, keys, values;
};

struct ForwardResult {
    Matrix logits;  // map tokens x vocab
    ScaleStates states;
    std::vector<AttentionSnapshot> snapshots;  // layer-major, then head; empty unless captured
};

// One next-scale step: attends over the retained cache plus the current map.
// The cache must be positioned at `scale` (SequencingError otherwise); the
// caller appends the returned key/value states afterwards.
ForwardResult forward_scale(const Model& model, const KvCache& cache, int scale,
                            const TokenMap& input_tokens, const ScaleSchedule& schedule,
                            bool capture_snapshots = false);

TokenMap upsample_nearest(const TokenMap& prev, int rows, int cols);

struct ScaleCacheStats {
    int scale = 0;
    int64_t bytes_peak = 0;     // after appending the scale, before compression
    int64_t bytes_after = 0;    // after the boundary compression
    int64_t retained_after = 0; // tokens across layers after compression
};

struct GenerationTrace {
    std::vector<TokenMap> token_maps;
    std::vector<AttentionSnapshot> snapshots;  // empty unless captured
    std::vector<Matrix> scale_logits;          // per scale, kept on request
    Matrix final_logits;                       // logits of the last scale
    std::vector<ScaleCacheStats> cache_stats;
    std::vector<CompressResult> compress_audit;
    int64_t peak_bytes = 0;
    int64_t end_bytes = 0;
    int64_t end_retained = 0;
    double wall_ms = 0.0;
};

struct GenerateOptions {
    bool capture_snapshots = false;
    bool keep_scale_logits = false;
};

// Greedy coarse-to-fine generation under an eviction policy. Eviction runs
// once per scale boundary, including after the last scale so the end-of-run
// footprint reflects the plan.
GenerationTrace generate(const Model& model, const PolicyConfig& policy, const ScaleSchedule& schedule,
                         uint64_t prompt_seed, const GenerateOptions& options = {});

}  // namespace scalekv
