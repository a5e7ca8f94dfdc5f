#pragma once

#include "scalekv/matrix.hpp"

namespace scalekv {

// Row-normalized attention weights for one (layer, scale, head) forward step.
// rows = query positions of the current map, cols = retained history followed
// by the current map, in ascending token order. Every row sums to 1.
struct AttentionSnapshot {
    int layer = 0;
    int scale = 0;  // zero-based
    int head = 0;
    Matrix weights;
};

}  // namespace scalekv
