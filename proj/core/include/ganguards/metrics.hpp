#pragma once

// Sample-set and image-pair quality measures: Frechet distance over deep
// features, SSIM, and the suspect-zoo accuracy table.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganguards/data.hpp"
#include "ganguards/features.hpp"
#include "ganguards/nn.hpp"
#include "ganguards/protection.hpp"

namespace ganguards::metrics {

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual FeatureMatrix features(const data::ImageBatch& images) const = 0;
    /// Stable identifier; FID values are only comparable under equal ids.
    virtual std::string id() const = 0;
};

/// Penultimate layer of a small CNN trained to tell the procedural shape
/// families apart.
class FamilyFeatureExtractor final : public FeatureExtractor {
public:
    struct Options {
        int image_size = 32;
        int channels = 3;
        int images_per_family = 900;
        int epochs = 3;
        std::uint64_t seed = 1234;
    };

    static FamilyFeatureExtractor train(const Options& options);
    /// Loads from `dir` if a valid checkpoint is there, otherwise trains and saves.
    static FamilyFeatureExtractor cached(const std::filesystem::path& dir, const Options& options);

    FeatureMatrix features(const data::ImageBatch& images) const override;
    std::string id() const override;

    void save(const std::filesystem::path& dir) const;
    static FamilyFeatureExtractor load(const std::filesystem::path& dir);

    int image_size() const { return image_size_; }
    int channels() const { return channels_; }
    double train_accuracy() const { return train_accuracy_; }

private:
    FamilyFeatureExtractor(int image_size, int channels, std::uint64_t seed);

    int image_size_, channels_;
    double train_accuracy_ = 0.0;
    nn::Sequential network_;
};

struct FidResult {
    double value = 0.0;
    std::string feature_extractor_id;
    int count_a = 0;
    int count_b = 0;
    /// Either side below kFidSampleFloor.
    bool low_sample_warning = false;

    nlohmann::json to_json() const;
};

inline constexpr int kFidSampleFloor = 500;

/// Frechet distance between Gaussian fits (unbiased covariance) of two
/// feature sets. Symmetric by construction.
double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b);

/// Closed form for given moments; `cov_*` are row-major d x d.
double frechet_distance(std::span<const double> mu_a, std::span<const double> cov_a, std::span<const double> mu_b,
                        std::span<const double> cov_b, int dim);

FidResult fid_from_features(const FeatureMatrix& a, const FeatureMatrix& b, const std::string& extractor_id);
FidResult fid(const data::ImageBatch& a, const data::ImageBatch& b, const FeatureExtractor& extractor);

struct SsimConfig {
    int window = 7;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;

    nlohmann::json to_json() const;
};

/// SSIM of image `ia` of `a` and image `ib` of `b`, averaged over channels
/// and all fully contained windows.
double ssim(const data::ImageBatch& a, int ia, const data::ImageBatch& b, int ib, const SsimConfig& config = {});
/// Mean pairwise SSIM over aligned batches.
double mean_ssim(const data::ImageBatch& a, const data::ImageBatch& b, const SsimConfig& config = {});

struct ZooEntry {
    std::string suspect;
    int label = 0;  // 1 = stolen
    double confidence = 0.0;
    int decision = 0;
    bool correct = false;
};

struct ZooReport {
    std::vector<ZooEntry> entries;
    double accuracy = 0.0;

    nlohmann::json to_json() const;
};

ZooReport suspect_zoo_report(const std::vector<protection::VerificationReport>& reports,
                             const std::vector<int>& labels, const std::vector<std::string>& names = {});

}  // namespace ganguards::metrics
