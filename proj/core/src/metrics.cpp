#include "ganguards/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <Eigen/Dense>

#include "ganguards/error.hpp"
#include "ganguards/gan.hpp"
#include "ganguards/hash.hpp"

namespace ganguards::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFeatureDim = 64;

nn::Tensor to_signed(const nn::Tensor& unit) {
    nn::Tensor out = unit;
    for (float& v : out.values()) v = 2.0f * v - 1.0f;
    return out;
}

// Mean softmax cross-entropy; `grad` receives d(loss)/d(logits).
double softmax_xent(const nn::Tensor& logits, std::span<const int> labels, nn::Tensor& grad) {
    const int n = logits.n(), k = logits.c();
    grad = nn::Tensor(n, k, 1, 1);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* l = logits.sample(i);
        const float top = *std::max_element(l, l + k);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(l[j] - top);
        loss += std::log(z) + top - l[labels[static_cast<std::size_t>(i)]];
        for (int j = 0; j < k; ++j) {
            const double p = std::exp(l[j] - top) / z;
            grad.sample(i)[j] = static_cast<float>((p - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) / n);
        }
    }
    return loss / n;
}

int argmax(const float* v, int k) { return static_cast<int>(std::max_element(v, v + k) - v); }

using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using VectorD = Eigen::VectorXd;

// Trace of sqrt(A^{1/2} B A^{1/2}) for symmetric PSD A, B.
double trace_sqrt_product(const MatrixD& a, const MatrixD& b) {
    Eigen::SelfAdjointEigenSolver<MatrixD> ea(a);
    VectorD ra = ea.eigenvalues();
    const double scale_a = std::max(1.0, ra.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ra.size(); ++i) {
        if (ra[i] < -1e-6 * scale_a) throw NumericalError("fid: covariance is not positive semi-definite");
        ra[i] = std::sqrt(std::max(0.0, ra[i]));
    }
    const MatrixD root_a = ea.eigenvectors() * ra.asDiagonal() * ea.eigenvectors().transpose();
    MatrixD inner = root_a * b * root_a;
    inner = 0.5 * (inner + inner.transpose());
    const VectorD lambda = Eigen::SelfAdjointEigenSolver<MatrixD>(inner, Eigen::EigenvaluesOnly).eigenvalues();
    const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
    double trace = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (lambda[i] < -1e-6 * scale) throw NumericalError("fid: covariance square root failed");
        trace += std::sqrt(std::max(0.0, lambda[i]));
    }
    return trace;
}

void moments(const FeatureMatrix& f, VectorD& mu, MatrixD& cov) {
    require(f.rows >= 2, "fid: each side needs at least 2 samples");
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(f.values.data(),
                                                                                                    f.rows, f.cols);
    for (double v : f.values)
        if (!std::isfinite(v)) throw NumericalError("fid: non-finite feature value");
    mu = x.colwise().mean().transpose();
    const MatrixD centered = x.rowwise() - mu.transpose();
    cov = (centered.transpose() * centered) / static_cast<double>(f.rows - 1);
}

double frechet(const VectorD& mu_a, const MatrixD& cov_a, const VectorD& mu_b, const MatrixD& cov_b) {
    const double mean_term = (mu_a - mu_b).squaredNorm();
    // Both orderings agree mathematically; averaging makes symmetry exact.
    const double cross = 0.5 * (trace_sqrt_product(cov_a, cov_b) + trace_sqrt_product(cov_b, cov_a));
    return std::max(0.0, mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross);
}

}  // namespace

// ---------------------------------------------------------------- extractor

FamilyFeatureExtractor::FamilyFeatureExtractor(int image_size, int channels, std::uint64_t seed)
    : image_size_(image_size), channels_(channels) {
    using namespace nn;
    require(image_size % 8 == 0 && image_size >= 8, "feature extractor: image size must be a multiple of 8");
    require(channels == 1 || channels == 3, "feature extractor: channels must be 1 or 3");
    std::mt19937_64 rng(seed);
    const int reduced = image_size / 8;
    network_.emplace<Conv2d>(channels, 16, 3, 2, 1, rng)
        .emplace<LeakyReLU>()
        .emplace<Conv2d>(16, 32, 3, 2, 1, rng)
        .emplace<LeakyReLU>()
        .emplace<Conv2d>(32, 64, 3, 2, 1, rng)
        .emplace<LeakyReLU>()
        .emplace<Reshape>(64 * reduced * reduced, 1, 1)
        .emplace<Linear>(64 * reduced * reduced, kFeatureDim, rng)
        .emplace<LeakyReLU>()
        .emplace<Linear>(kFeatureDim, static_cast<int>(data::known_families().size()), rng, 1.0f);
}

FamilyFeatureExtractor FamilyFeatureExtractor::train(const Options& o) {
    require(o.images_per_family >= 3 && o.images_per_family % 3 == 0,
            "feature extractor: images_per_family must be a positive multiple of 3");
    require(o.epochs >= 1, "feature extractor: epochs must be >= 1");
    FamilyFeatureExtractor fx(o.image_size, o.channels, mix64(o.seed ^ 0xfea7ULL));
    const auto& families = data::known_families();
    std::vector<data::ImageBatch> sets;
    std::vector<int> labels;
    for (std::size_t f = 0; f < families.size(); ++f) {
        sets.push_back(data::make_procedural_dataset({families[f], o.image_size, o.channels}, o.images_per_family,
                                                     mix64(o.seed + f + 1)));
        labels.insert(labels.end(), static_cast<std::size_t>(o.images_per_family), static_cast<int>(f));
    }
    std::vector<const data::ImageBatch*> parts;
    for (const auto& s : sets) parts.push_back(&s);
    const data::ImageBatch all = data::concat(parts);

    std::mt19937_64 rng(mix64(o.seed ^ 0x0dd5ULL));
    std::vector<int> order(static_cast<std::size_t>(all.count()));
    std::iota(order.begin(), order.end(), 0);
    nn::Adam opt(1e-3f, 0.9f, 0.999f);
    auto params = fx.network_.params();
    constexpr int kBatch = 64;
    std::vector<int> batch, batch_labels;
    for (int epoch = 0; epoch < o.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t first = 0; first < order.size(); first += kBatch) {
            const std::size_t last = std::min(order.size(), first + kBatch);
            batch.assign(order.begin() + static_cast<std::ptrdiff_t>(first),
                         order.begin() + static_cast<std::ptrdiff_t>(last));
            batch_labels.clear();
            for (int i : batch) batch_labels.push_back(labels[static_cast<std::size_t>(i)]);
            fx.network_.zero_grad();
            const nn::Tensor logits = fx.network_.forward(to_signed(all.select(batch).pixels()));
            nn::Tensor grad;
            if (!std::isfinite(softmax_xent(logits, batch_labels, grad)))
                throw NumericalError("feature extractor training diverged");
            fx.network_.backward(grad);
            opt.step(params);
        }
    }
    const nn::Tensor logits = fx.network_.infer(to_signed(all.pixels()));
    int correct = 0;
    for (int i = 0; i < all.count(); ++i)
        correct += argmax(logits.sample(i), logits.c()) == labels[static_cast<std::size_t>(i)] ? 1 : 0;
    fx.train_accuracy_ = static_cast<double>(correct) / all.count();
    return fx;
}

FamilyFeatureExtractor FamilyFeatureExtractor::cached(const fs::path& dir, const Options& options) {
    const json key{{"image_size", options.image_size},
                   {"channels", options.channels},
                   {"images_per_family", options.images_per_family},
                   {"epochs", options.epochs},
                   {"seed", options.seed}};
    const fs::path slot = dir / ("family-cnn-" + sha256_hex(key.dump()).substr(0, 16));
    if (fs::exists(slot / "manifest.json")) {
        try {
            return load(slot);
        } catch (const CorruptionError& e) {
            std::cerr << "warning: discarding corrupt feature extractor cache: " << e.what() << '\n';
        }
    }
    FamilyFeatureExtractor fx = train(options);
    fx.save(slot);
    return fx;
}

FeatureMatrix FamilyFeatureExtractor::features(const data::ImageBatch& images) const {
    require(images.size() == image_size_ && images.channels() == channels_,
            "feature extractor expects " + std::to_string(image_size_) + "px x " + std::to_string(channels_) +
                " channel images");
    constexpr int kChunk = 256;
    FeatureMatrix out(images.count(), kFeatureDim);
    for (int first = 0; first < images.count(); first += kChunk) {
        const int count = std::min(kChunk, images.count() - first);
        const nn::Tensor f =
            network_.infer(to_signed(images.pixels().slice(first, count)), network_.depth() - 1);
        for (std::size_t i = 0; i < f.size(); ++i)
            out.values[static_cast<std::size_t>(first) * kFeatureDim + i] = f.data()[i];
    }
    return out;
}

std::string FamilyFeatureExtractor::id() const {
    return "family-cnn-" + zoo::weight_blob_hash(network_.weights()).substr(0, 12);
}

void FamilyFeatureExtractor::save(const fs::path& dir) const {
    fs::create_directories(dir);
    const auto weights = network_.weights();
    zoo::write_weight_blob(dir / "weights.bin", weights);
    const json manifest{{"format", "ganguards-feature-extractor-v1"},
                        {"image_size", image_size_},
                        {"channels", channels_},
                        {"feature_dim", kFeatureDim},
                        {"train_accuracy", train_accuracy_},
                        {"weights_hash", zoo::weight_blob_hash(weights)}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

FamilyFeatureExtractor FamilyFeatureExtractor::load(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    require(static_cast<bool>(in), "no feature extractor manifest in " + dir.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("unreadable feature extractor manifest: ") + e.what());
    }
    FamilyFeatureExtractor fx(j.at("image_size").get<int>(), j.at("channels").get<int>(), 0);
    const auto weights = zoo::read_weight_blob(dir / "weights.bin", j.at("weights_hash").get<std::string>());
    if (weights.size() != fx.network_.parameter_count())
        throw CorruptionError("feature extractor weights do not fit the architecture");
    fx.network_.set_weights(weights);
    fx.train_accuracy_ = j.value("train_accuracy", 0.0);
    return fx;
}

// ---------------------------------------------------------------- FID

json FidResult::to_json() const {
    return json{{"value", value},
                {"feature_extractor_id", feature_extractor_id},
                {"count_a", count_a},
                {"count_b", count_b},
                {"low_sample_warning", low_sample_warning}};
}

double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
    require(a.cols == b.cols, "fid: feature dimensions differ");
    VectorD mu_a, mu_b;
    MatrixD cov_a, cov_b;
    moments(a, mu_a, cov_a);
    moments(b, mu_b, cov_b);
    return frechet(mu_a, cov_a, mu_b, cov_b);
}

double frechet_distance(std::span<const double> mu_a, std::span<const double> cov_a, std::span<const double> mu_b,
                        std::span<const double> cov_b, int dim) {
    const auto d = static_cast<std::size_t>(dim);
    require(dim >= 1 && mu_a.size() == d && mu_b.size() == d && cov_a.size() == d * d && cov_b.size() == d * d,
            "frechet_distance: moment shapes do not match dim");
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const VectorD ma = Eigen::Map<const VectorD>(mu_a.data(), dim);
    const VectorD mb = Eigen::Map<const VectorD>(mu_b.data(), dim);
    const MatrixD ca = Eigen::Map<const RowMajor>(cov_a.data(), dim, dim);
    const MatrixD cb = Eigen::Map<const RowMajor>(cov_b.data(), dim, dim);
    return frechet(ma, ca, mb, cb);
}

FidResult fid_from_features(const FeatureMatrix& a, const FeatureMatrix& b, const std::string& extractor_id) {
    FidResult r;
    r.value = frechet_distance(a, b);
    r.feature_extractor_id = extractor_id;
    r.count_a = a.rows;
    r.count_b = b.rows;
    r.low_sample_warning = a.rows < kFidSampleFloor || b.rows < kFidSampleFloor;
    if (r.low_sample_warning)
        std::cerr << "warning: FID on " << a.rows << " vs " << b.rows << " samples (below " << kFidSampleFloor
                  << "); covariance estimates are unstable\n";
    return r;
}

FidResult fid(const data::ImageBatch& a, const data::ImageBatch& b, const FeatureExtractor& extractor) {
    require(a.count() >= 2 && b.count() >= 2, "fid: each side needs at least 2 samples");
    require(a.size() == b.size() && a.channels() == b.channels(), "fid: sample sets differ in resolution");
    return fid_from_features(extractor.features(a), extractor.features(b), extractor.id());
}

// ---------------------------------------------------------------- SSIM

json SsimConfig::to_json() const {
    return json{{"window", window}, {"sigma", sigma}, {"k1", k1}, {"k2", k2}, {"data_range", data_range}};
}

double ssim(const data::ImageBatch& a, int ia, const data::ImageBatch& b, int ib, const SsimConfig& cfg) {
    require(a.size() == b.size() && a.channels() == b.channels(), "ssim: image shapes differ");
    require(ia >= 0 && ia < a.count() && ib >= 0 && ib < b.count(), "ssim: image index out of range");
    require(cfg.window >= 1 && cfg.window % 2 == 1, "ssim: window must be odd and positive");
    require(cfg.window <= a.size(), "ssim: window larger than the image");
    require(cfg.sigma > 0, "ssim: window sigma must be positive");

    const int w = cfg.window, r = w / 2, size = a.size();
    std::vector<double> kernel(static_cast<std::size_t>(w) * w);
    double norm = 0.0;
    for (int y = 0; y < w; ++y)
        for (int x = 0; x < w; ++x) {
            const double d2 = (y - r) * (y - r) + (x - r) * (x - r);
            norm += kernel[static_cast<std::size_t>(y) * w + x] = std::exp(-d2 / (2.0 * cfg.sigma * cfg.sigma));
        }
    for (double& k : kernel) k /= norm;

    const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
    const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    double total = 0.0;
    int windows = 0;
    for (int c = 0; c < a.channels(); ++c) {
        const float* pa = a.pixels().sample(ia) + c * plane;
        const float* pb = b.pixels().sample(ib) + c * plane;
        for (int y0 = 0; y0 + w <= size; ++y0)
            for (int x0 = 0; x0 + w <= size; ++x0) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int y = 0; y < w; ++y)
                    for (int x = 0; x < w; ++x) {
                        const double k = kernel[static_cast<std::size_t>(y) * w + x];
                        const double va = pa[(y0 + y) * size + x0 + x], vb = pb[(y0 + y) * size + x0 + x];
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                ++windows;
            }
    }
    return total / windows;
}

double mean_ssim(const data::ImageBatch& a, const data::ImageBatch& b, const SsimConfig& config) {
    require(a.count() == b.count() && a.count() >= 1, "mean_ssim: batches must be aligned and non-empty");
    double sum = 0.0;
    for (int i = 0; i < a.count(); ++i) sum += ssim(a, i, b, i, config);
    return sum / a.count();
}

// ---------------------------------------------------------------- zoo

json ZooReport::to_json() const {
    json rows = json::array();
    for (const auto& e : entries)
        rows.push_back({{"suspect", e.suspect},
                        {"label", e.label ? "stolen" : "honest"},
                        {"confidence", e.confidence},
                        {"decision", e.decision ? "stolen" : "honest"},
                        {"correct", e.correct}});
    return json{{"entries", rows}, {"accuracy", accuracy}};
}

ZooReport suspect_zoo_report(const std::vector<protection::VerificationReport>& reports,
                             const std::vector<int>& labels, const std::vector<std::string>& names) {
    require(!reports.empty(), "suspect_zoo_report: no reports");
    require(labels.size() == reports.size(), "suspect_zoo_report: one label per report required");
    require(names.empty() || names.size() == reports.size(), "suspect_zoo_report: one name per report required");
    ZooReport z;
    int correct = 0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        ZooEntry e;
        e.suspect = names.empty() ? reports[i].suspect_ref : names[i];
        e.label = labels[i] ? 1 : 0;
        e.confidence = reports[i].confidence_score;
        e.decision = reports[i].decision;
        e.correct = e.decision == e.label;
        correct += e.correct ? 1 : 0;
        z.entries.push_back(std::move(e));
    }
    z.accuracy = static_cast<double>(correct) / static_cast<double>(reports.size());
    return z;
}

}  // namespace ganguards::metrics
