#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace scalekv {

// Deterministic RNG used for weight init and prompt embeddings.
// splitmix64 core with a Box-Muller gaussian on top; the stream depends only
// on the seed, never on the platform's distribution implementations, so any
// two builds replay the same model bit for bit.
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float next_gaussian();

    // Convenience: n gaussians scaled by sigma.
    std::vector<float> gaussians(size_t n, float sigma);

  private:
    uint64_t state_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over raw bytes; used for weight checksums and plan digests.
uint64_t fnv1a64(std::span<const unsigned char> bytes);
uint64_t checksum_floats(std::span<const float> values);

}  // namespace scalekv
