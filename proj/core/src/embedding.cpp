#include "ganguards/embedding.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "ganguards/error.hpp"

namespace ganguards::embedding {

namespace {

std::vector<double> squared_distances(const FeatureMatrix& x) {
    const int n = x.rows;
    std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < x.cols; ++k) {
                const double t = x.at(i, k) - x.at(j, k);
                s += t * t;
            }
            d[static_cast<std::size_t>(i) * n + j] = d[static_cast<std::size_t>(j) * n + i] = s;
        }
    return d;
}

// Row-conditional affinities with per-row bandwidth matched to the perplexity.
std::vector<double> affinities(const std::vector<double>& dist, int n, double perplexity) {
    std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);
    const double target = std::log(perplexity);
    for (int i = 0; i < n; ++i) {
        const double* di = &dist[static_cast<std::size_t>(i) * n];
        double* pi = &p[static_cast<std::size_t>(i) * n];
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        for (int it = 0; it < 100; ++it) {
            double sum = 0.0, weighted = 0.0;
            for (int j = 0; j < n; ++j) {
                pi[j] = j == i ? 0.0 : std::exp(-di[j] * beta);
                sum += pi[j];
                weighted += di[j] * pi[j];
            }
            sum = std::max(sum, 1e-300);
            const double entropy = std::log(sum) + beta * weighted / sum;
            for (int j = 0; j < n; ++j) pi[j] /= sum;
            const double diff = entropy - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
            } else {
                hi = beta;
                beta = (beta + lo) / 2;
            }
        }
    }
    std::vector<double> sym(p.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            sym[static_cast<std::size_t>(i) * n + j] = std::max(
                (p[static_cast<std::size_t>(i) * n + j] + p[static_cast<std::size_t>(j) * n + i]) / (2.0 * n), 1e-12);
    return sym;
}

}  // namespace

nlohmann::json TsneOptions::to_json() const {
    return {{"method", "exact-tsne"},
            {"perplexity", perplexity},
            {"iterations", iterations},
            {"learning_rate", learning_rate},
            {"early_exaggeration", early_exaggeration},
            {"exaggeration_iterations", exaggeration_iterations},
            {"seed", seed}};
}

FeatureMatrix tsne(const FeatureMatrix& x, const TsneOptions& o) {
    const int n = x.rows;
    require(n >= 4, "tsne: need at least 4 points");
    require(o.perplexity > 0 && 3 * o.perplexity < n, "tsne: perplexity must be below a third of the point count");
    require(o.iterations >= 1, "tsne: iterations must be >= 1");
    for (double v : x.values)
        if (!std::isfinite(v)) throw NumericalError("tsne: non-finite feature");

    const std::vector<double> p = affinities(squared_distances(x), n, o.perplexity);
    FeatureMatrix y(n, 2);
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> normal(0.0, 1e-4);
    for (double& v : y.values) v = normal(rng);

    std::vector<double> update(y.values.size(), 0.0), gains(y.values.size(), 1.0), grad(y.values.size());
    std::vector<double> num(static_cast<std::size_t>(n) * n);
    for (int it = 0; it < o.iterations; ++it) {
        const double exaggeration = it < o.exaggeration_iterations ? o.early_exaggeration : 1.0;
        const double momentum = it < o.exaggeration_iterations ? 0.5 : 0.8;
        double z = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double q = 0.0;
                if (i != j) {
                    const double dx = y.at(i, 0) - y.at(j, 0), dy = y.at(i, 1) - y.at(j, 1);
                    q = 1.0 / (1.0 + dx * dx + dy * dy);
                }
                num[static_cast<std::size_t>(i) * n + j] = q;
                z += q;
            }
        std::fill(grad.begin(), grad.end(), 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = num[static_cast<std::size_t>(i) * n + j];
                const double mult = (exaggeration * p[static_cast<std::size_t>(i) * n + j] - std::max(q / z, 1e-12)) * q;
                grad[2 * i] += 4.0 * mult * (y.at(i, 0) - y.at(j, 0));
                grad[2 * i + 1] += 4.0 * mult * (y.at(i, 1) - y.at(j, 1));
            }
        for (std::size_t k = 0; k < y.values.size(); ++k) {
            gains[k] = (grad[k] > 0) != (update[k] > 0) ? gains[k] + 0.2 : std::max(0.01, gains[k] * 0.8);
            update[k] = momentum * update[k] - o.learning_rate * gains[k] * grad[k];
            y.values[k] += update[k];
        }
        for (int c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (int i = 0; i < n; ++i) mean += y.at(i, c);
            mean /= n;
            for (int i = 0; i < n; ++i) y.at(i, c) -= mean;
        }
    }
    return y;
}

Embedder tsne_embedder(const TsneOptions& options) {
    return [options](const FeatureMatrix& x) { return tsne(x, options); };
}

double silhouette(const FeatureMatrix& x, std::span<const int> labels) {
    const int n = x.rows;
    require(static_cast<int>(labels.size()) == n, "silhouette: one label per row required");
    std::map<int, int> sizes;
    for (int l : labels) ++sizes[l];
    require(sizes.size() >= 2, "silhouette: need at least two clusters");

    double total = 0.0;
    std::map<int, double> sums;
    for (int i = 0; i < n; ++i) {
        if (sizes[labels[static_cast<std::size_t>(i)]] == 1) continue;
        for (auto& [label, s] : sums) s = 0.0;
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double d = 0.0;
            for (int k = 0; k < x.cols; ++k) {
                const double t = x.at(i, k) - x.at(j, k);
                d += t * t;
            }
            sums[labels[static_cast<std::size_t>(j)]] += std::sqrt(d);
        }
        const int own = labels[static_cast<std::size_t>(i)];
        const double a = sums[own] / (sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, s] : sums)
            if (label != own) b = std::min(b, s / sizes[label]);
        const double denom = std::max(a, b);
        total += denom > 0 ? (b - a) / denom : 0.0;
    }
    return total / n;
}

}  // namespace ganguards::embedding
