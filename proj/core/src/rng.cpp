#include "scalekv/rng.hpp"

#include <cmath>
#include <cstring>

namespace scalekv {

float SeededRng::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return static_cast<float>(spare_);
    }
    // Box-Muller on two fresh uniforms. 1 - u keeps the log argument in (0, 1].
    double u1 = 1.0 - next_unit();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return static_cast<float>(r * std::cos(theta));
}

std::vector<float> SeededRng::gaussians(size_t n, float sigma) {
    std::vector<float> out(n);
    for (auto& v : out) v = next_gaussian() * sigma;
    return out;
}

uint64_t fnv1a64(std::span<const unsigned char> bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t checksum_floats(std::span<const float> values) {
    static_assert(sizeof(float) == 4);
    uint64_t h = 0xcbf29ce484222325ull;
    for (float v : values) {
        unsigned char raw[4];
        std::memcpy(raw, &v, 4);
        for (unsigned char b : raw) {
            h ^= b;
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

}  // namespace scalekv
