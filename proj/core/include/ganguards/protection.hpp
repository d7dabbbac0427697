#pragma once

// Ownership protection: a binary detector trained on samples of the target,
// its extracted substitute (both positive) and an independently trained GAN
// (negative); verification decides ownership from suspect samples alone.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganguards/data.hpp"
#include "ganguards/features.hpp"
#include "ganguards/gan.hpp"
#include "ganguards/nn.hpp"

namespace ganguards::protection {

inline constexpr double kDefaultTau = 0.90;
inline constexpr int kDefaultM = 1000;

struct ClassifierConfig {
    int epochs = 5;
    float learning_rate = 0.003f;
    float momentum = 0.9f;
    int batch_size = 64;
    /// Fraction of the assembled training set held out for the build check.
    double holdout_fraction = 0.05;
    std::uint64_t seed = 0;
    /// Optional externally supplied initial weights (classifier weight blob).
    std::optional<std::filesystem::path> pretrained_weights;

    void validate() const;
    nlohmann::json to_json() const;
};

struct ClassifierManifest {
    int image_size = 0;
    int channels = 0;
    int feature_dim = 0;
    int n_pos_target = 0;
    int n_pos_sub = 0;
    int n_neg = 0;
    std::map<std::string, std::uint64_t> seeds;
    std::vector<std::string> source_model_ids;
    int epochs = 0;
    nlohmann::json optimizer;
    int holdout_count = 0;
    double holdout_accuracy = 0.0;
    std::string weights_hash;

    nlohmann::json to_json() const;
    static ClassifierManifest from_json(const nlohmann::json& j);
};

class ProtectionClassifier {
public:
    /// Untrained classifier for `image_size` x `image_size` x `channels` inputs.
    ProtectionClassifier(int image_size, int channels, std::uint64_t init_seed);

    int image_size() const { return manifest_.image_size; }
    int channels() const { return manifest_.channels; }
    int feature_dim() const { return manifest_.feature_dim; }
    const ClassifierManifest& manifest() const { return manifest_; }
    ClassifierManifest& manifest() { return manifest_; }
    /// SHA-256 of the serialized manifest (includes the weights hash).
    std::string manifest_hash() const;

    nn::Sequential& network() { return network_; }
    const nn::Sequential& network() const { return network_; }

    /// Positive-class logits, one per sample.
    std::vector<float> logits(const data::ImageBatch& samples) const;
    /// Penultimate-layer activations (count x feature_dim).
    FeatureMatrix penultimate_features(const data::ImageBatch& samples) const;

private:
    void check_input(const data::ImageBatch& samples) const;

    nn::Sequential network_;
    ClassifierManifest manifest_;
};

/// Labelled training set as assembled for the detector.
struct TrainingSet {
    data::ImageBatch target_samples;       // positive: physical stealing class
    data::ImageBatch substitute_samples;   // positive: model extraction class
    data::ImageBatch independent_samples;  // negative
};

/// Throws PreconditionError unless the classes are balanced n + n vs 2n and
/// every batch carries the provenance of its role.
void check_training_set(const TrainingSet& set);

ProtectionClassifier train_classifier(const TrainingSet& set, const ClassifierConfig& config,
                                      const std::vector<std::string>& source_model_ids = {});

struct Budgets {
    int query_budget = 10'000;  // samples drawn from the target to extract the substitute
    int per_class = 5'000;      // n: positives per positive class; 2n negatives
};

struct ProtectionConfig {
    Budgets budgets;
    zoo::TrainConfig extraction_training;
    zoo::TrainConfig independent_training;
    ClassifierConfig classifier;
    std::uint64_t extraction_query_seed = 0;
    std::uint64_t sample_seed = 0;
};

struct ProtectionBuild {
    ProtectionClassifier classifier;
    zoo::GeneratorModel substitute;
    zoo::GeneratorModel independent;
};

/// Extracts a substitute from `target`, trains an independent GAN on
/// `independent_data`, samples n / n / 2n images and trains the detector.
/// When `target_training_data` is given, disjointness is checked image by image.
ProtectionBuild build_protection(const zoo::GeneratorModel& target, const data::ImageBatch& independent_data,
                                 const ProtectionConfig& config,
                                 const data::ImageBatch* target_training_data = nullptr);

/// Assembles and trains from already-trained generators (last stage of build_protection).
ProtectionClassifier train_from_generators(const zoo::GeneratorModel& target, const zoo::GeneratorModel& substitute,
                                           const zoo::GeneratorModel& independent, const ProtectionConfig& config);

/// One bit per sample (1 = derived from the target).
std::vector<std::uint8_t> predict_batch(const ProtectionClassifier& clf, const data::ImageBatch& samples);

/// positives / m. Requires a non-empty vector.
double confidence_score(std::span<const std::uint8_t> predictions);

/// 1 (stolen) iff confidence > tau; a tie is honest.
int ownership_decision(double confidence, double tau);

struct VerificationReport {
    std::string suspect_ref;
    int m = 0;
    std::vector<std::uint8_t> predictions;
    int positives = 0;
    double confidence_score = 0.0;
    double tau = kDefaultTau;
    int decision = 0;
    std::string classifier_manifest_hash;
    std::string timestamp;

    nlohmann::json to_json(bool include_timestamp = true) const;
    static VerificationReport from_json(const nlohmann::json& j);
};

/// Uses exactly the first `m` samples.
VerificationReport perform_verification(const ProtectionClassifier& clf, const data::ImageBatch& suspect_samples,
                                        double tau = kDefaultTau, int m = kDefaultM,
                                        const std::string& suspect_ref = {});

FeatureMatrix penultimate_features(const ProtectionClassifier& clf, const data::ImageBatch& samples);

/// Writes `dir/weights.bin` and `dir/manifest.json`.
void save_classifier(const ProtectionClassifier& clf, const std::filesystem::path& dir);
ProtectionClassifier load_classifier(const std::filesystem::path& dir);

void save_report(const VerificationReport& report, const std::filesystem::path& file);
VerificationReport load_report(const std::filesystem::path& file);

}  // namespace ganguards::protection
