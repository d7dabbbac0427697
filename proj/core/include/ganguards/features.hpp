#pragma once

#include <cstddef>
#include <vector>

namespace ganguards {

/// Dense row-major feature matrix (one row per image).
struct FeatureMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;

    FeatureMatrix() = default;
    FeatureMatrix(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
    const double* row(int r) const { return values.data() + static_cast<std::size_t>(r) * cols; }
};

}  // namespace ganguards
