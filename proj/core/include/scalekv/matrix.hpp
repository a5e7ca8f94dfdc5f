#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "scalekv/errors.hpp"

namespace scalekv {

// Dense row-major float32 matrix. All model state and attention maps use
// 32-bit floats; analysis code accumulates in double on top of these.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0f) {
        if (r < 0 || c < 0) throw ShapeError("matrix dims must be non-negative");
    }

    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<float> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
    std::span<const float> row(int r) const {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
};

}  // namespace scalekv
