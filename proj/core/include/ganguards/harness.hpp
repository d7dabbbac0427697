#pragma once

// Experiment configuration, the per-trial artifact pipeline with hash-keyed
// caching, experiment records and figure emission.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganguards/data.hpp"
#include "ganguards/embedding.hpp"
#include "ganguards/gan.hpp"
#include "ganguards/metrics.hpp"
#include "ganguards/obfuscation.hpp"
#include "ganguards/protection.hpp"

namespace ganguards::harness {

enum class ExperimentKind {
    verification,
    obfuscation_sweep,
    cross_arch_extraction,
    generations,
    sample_count_sweep,
    adaptive_I,
    adaptive_II,
    finetune
};

std::string to_string(ExperimentKind kind);
ExperimentKind parse_kind(const std::string& text);

struct DatasetSpec {
    std::string family = "blobs";
    int count = 3000;
    int size = 32;
    int channels = 3;
};

nlohmann::json to_json(const zoo::TrainConfig& config);
/// Fields absent from `j` keep the value from `base`; unknown fields are rejected.
zoo::TrainConfig train_config_from_json(const nlohmann::json& j, zoo::TrainConfig base = {});

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::verification;
    std::string name;
    DatasetSpec dataset;
    std::string target_arch = "gan-a";
    int latent_dim = 64;
    /// Shared by every GAN in the pipeline; seeds come from the trial policy.
    zoo::TrainConfig gan;
    protection::Budgets budgets;
    protection::ClassifierConfig classifier;
    double tau = protection::kDefaultTau;
    int m = protection::kDefaultM;
    std::vector<std::uint64_t> trial_seeds{1, 2, 3};

    std::vector<std::string> suspects{"PS", "ME", "Ind-a", "Ind-b"};
    std::vector<obfuscation::AttackSpec> attacks;
    std::vector<std::string> attacker_archs{"gan-a", "gan-b", "gan-c"};
    int generations = 3;
    std::vector<int> m_values{50, 100, 500, 1000, 2000};
    int subsets = 20;
    std::vector<std::string> strategies{"I", "II", "III"};
    int finetune_steps = 600;
    /// Snapshot spacing of the attacker's extraction run.
    int snapshot_every = 100;
    int fid_samples = 1000;

    bool figures = true;
    embedding::TsneOptions tsne;
    int tsne_per_group = 150;

    /// Attack list used when `attacks` is empty.
    static std::vector<obfuscation::AttackSpec> default_attacks(int finetune_steps);

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& file);
    std::string hash() const;
};

/// GANGUARDS_CACHE if set, else `<out>/cache`.
std::filesystem::path cache_root(const std::filesystem::path& out);

/// Directory-per-artifact cache keyed by the SHA-256 of a JSON recipe.
class ArtifactCache {
public:
    explicit ArtifactCache(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    static std::string key(const nlohmann::json& recipe);
    std::filesystem::path slot(const nlohmann::json& recipe) const;

    /// Loads the artifact for `recipe` or builds, saves and returns it. A
    /// corrupt entry is discarded and rebuilt.
    template <class T>
    T get(const nlohmann::json& recipe, const std::function<T()>& build,
          const std::function<void(const T&, const std::filesystem::path&)>& save,
          const std::function<T(const std::filesystem::path&)>& load);

    int hits() const { return hits_; }
    int builds() const { return builds_; }

private:
    bool ready(const std::filesystem::path& dir) const;
    void commit(const nlohmann::json& recipe, const std::filesystem::path& staging,
                const std::filesystem::path& dir) const;
    std::filesystem::path staging_dir(const std::filesystem::path& dir) const;
    void discard(const std::filesystem::path& dir, const std::string& why) const;

    std::filesystem::path root_;
    int hits_ = 0;
    int builds_ = 0;
};

struct DefenderArtifacts {
    protection::ProtectionClassifier classifier;
    zoo::GeneratorModel substitute;
    zoo::GeneratorModel independent;
};

/// One seeded instance of the full pipeline. Every artifact is built lazily,
/// cached by recipe, and derived from labelled streams of the trial seed.
class Trial {
public:
    Trial(const ExperimentConfig& config, std::uint64_t seed, ArtifactCache& cache);

    std::uint64_t seed() const { return seed_; }
    const data::SeedPolicy& seeds() const { return seeds_; }
    std::uint64_t stream(const std::string& label) { return seeds_.stream(label); }

    const data::DatasetSplit& split();
    const zoo::GeneratorModel& target();
    const DefenderArtifacts& defender();
    const protection::ProtectionClassifier& classifier() { return defender().classifier; }

    /// PS (the target itself), ME (gan-a extraction by the attacker), Ind-a, Ind-b.
    const zoo::GeneratorModel& suspect(const std::string& name);
    /// Attacker extraction of the target with the given architecture.
    const zoo::GeneratorModel& extracted(zoo::ArchId arch);
    /// Snapshots of the attacker's gan-a extraction run (the ME suspect).
    const std::vector<zoo::Checkpoint>& extraction_snapshots();
    /// Generation g >= 1 of repeated extraction; generation 1 is ME.
    const zoo::GeneratorModel& generation(int g);
    const zoo::GeneratorModel& fine_tuned(const std::string& base, int steps);
    const metrics::FamilyFeatureExtractor& extractor();

    data::ImageBatch samples(const zoo::GeneratorModel& model, const std::string& label, int count);
    protection::VerificationReport verify(const data::ImageBatch& samples, const std::string& ref);

    /// Every model materialized so far, by role name.
    const std::map<std::string, const zoo::GeneratorModel*>& models() const { return models_; }
    /// Cache keys of everything materialized so far, by role name.
    const std::map<std::string, std::string>& keys() const { return keys_; }

private:
    nlohmann::json base_recipe() const;
    nlohmann::json recipe(const std::string& role, nlohmann::json extra = nlohmann::json::object()) const;
    zoo::TrainConfig gan_config(const std::string& label);
    const zoo::GeneratorModel& cached_model(const std::string& role, const nlohmann::json& recipe,
                                            const std::function<zoo::GeneratorModel()>& build);

    const ExperimentConfig& config_;
    std::uint64_t seed_;
    ArtifactCache& cache_;
    data::SeedPolicy seeds_;
    std::optional<data::DatasetSplit> split_;
    std::map<std::string, std::unique_ptr<zoo::GeneratorModel>> owned_;
    std::optional<DefenderArtifacts> defender_;
    std::optional<std::vector<zoo::Checkpoint>> snapshots_;
    std::optional<metrics::FamilyFeatureExtractor> extractor_;
    std::map<std::string, const zoo::GeneratorModel*> models_;
    std::map<std::string, std::string> keys_;
};

struct TrialRecord {
    std::uint64_t seed = 0;
    std::vector<std::string> names;
    std::vector<int> labels;  // expected decision per report
    std::vector<protection::VerificationReport> reports;
    nlohmann::json tables = nlohmann::json::object();
    std::map<std::string, std::uint64_t> streams;
};

struct ExperimentRecord {
    std::string config_hash;
    ExperimentKind kind = ExperimentKind::verification;
    nlohmann::json config;
    std::vector<TrialRecord> trials;
    nlohmann::json summary = nlohmann::json::object();
    std::vector<std::string> figures;
    double wall_time_s = 0.0;

    nlohmann::json to_json(bool include_timestamps = true) const;
    static ExperimentRecord from_json(const nlohmann::json& j);
};

/// Runs every trial, writes `<out>/{models,classifiers,reports,figures}` with
/// manifests and `<out>/record.json`.
ExperimentRecord run_experiment(const ExperimentConfig& config, const std::filesystem::path& out,
                                ArtifactCache& cache, std::ostream* log = nullptr);

/// Renders the record's figures into `<out>/figures` and returns their paths.
std::vector<std::filesystem::path> emit_figures(const ExperimentRecord& record, const std::filesystem::path& out);

void save_record(const ExperimentRecord& record, const std::filesystem::path& out);
ExperimentRecord load_record(const std::filesystem::path& out);

// ---- template implementation

template <class T>
T ArtifactCache::get(const nlohmann::json& recipe, const std::function<T()>& build,
                     const std::function<void(const T&, const std::filesystem::path&)>& save,
                     const std::function<T(const std::filesystem::path&)>& load) {
    const std::filesystem::path dir = slot(recipe);
    if (ready(dir)) {
        try {
            T value = load(dir);
            ++hits_;
            return value;
        } catch (const std::exception& e) {
            discard(dir, e.what());
        }
    }
    T value = build();
    const std::filesystem::path staging = staging_dir(dir);
    save(value, staging);
    commit(recipe, staging, dir);
    ++builds_;
    return value;
}

}  // namespace ganguards::harness
