#pragma once

// 2-D embedding of feature rows for visualization, and cluster separation.

#include <cstdint>
#include <functional>
#include <span>

#include <nlohmann/json.hpp>

#include "ganguards/features.hpp"

namespace ganguards::embedding {

struct TsneOptions {
    double perplexity = 30.0;
    int iterations = 750;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iterations = 250;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

/// Any function mapping feature rows to 2-D rows qualifies as an embedder.
using Embedder = std::function<FeatureMatrix(const FeatureMatrix&)>;

/// Exact (O(N^2)) t-SNE.
FeatureMatrix tsne(const FeatureMatrix& x, const TsneOptions& options = {});

Embedder tsne_embedder(const TsneOptions& options);

/// Mean silhouette coefficient under Euclidean distance; singleton clusters
/// contribute 0. Needs at least two distinct labels.
double silhouette(const FeatureMatrix& x, std::span<const int> labels);

}  // namespace ganguards::embedding
