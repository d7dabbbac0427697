#pragma once

// Small generator/discriminator families, the GAN training loop with
// snapshotting, sampling, and checkpoint persistence.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganguards/data.hpp"
#include "ganguards/nn.hpp"

namespace ganguards::zoo {

/// gan-a: upsample+conv, no normalization.
/// gan-b: transposed convolutions with pixel normalization.
/// gan-c: mapping MLP, deeper trunk with instance normalization.
enum class ArchId { gan_a, gan_b, gan_c };

std::string to_string(ArchId arch);
ArchId parse_arch(const std::string& text);

enum class Role { target, substitute, independent, suspect };

std::string to_string(Role role);
Role parse_role(const std::string& text);

struct Lineage {
    std::string id;
    Role role = Role::target;
    std::optional<std::string> parent_id;
    int generation_index = 0;
    std::uint64_t train_seed = 0;
    std::string train_data_ref;
    /// "train", "extraction" or "fine_tune".
    std::string derivation = "train";
    /// Ids from the root down to (excluding) this model.
    std::vector<std::string> ancestry;
    /// Architecture of every model in `ancestry`, same order.
    std::vector<std::string> ancestry_arch;
};

/// Throws PreconditionError unless generation_index == 0 iff there is no
/// parent, and ancestry has no repeated ids.
void validate_lineage(const Lineage& lineage);

enum class LossKind { nonsaturating, hinge };

struct TrainConfig {
    int steps = 1200;
    int batch_size = 32;
    float lr_generator = 1e-3f;
    float lr_discriminator = 1e-3f;
    float beta1 = 0.0f;
    float beta2 = 0.999f;
    LossKind loss = LossKind::nonsaturating;
    int snapshot_every = 200;
    /// Published weights are an exponential moving average of the generator
    /// iterates; 0 publishes the raw iterate.
    float ema_decay = 0.999f;
    std::uint64_t seed = 0;

    void validate() const;
    std::string hash() const;
};

class GeneratorModel {
public:
    GeneratorModel(ArchId arch, int latent_dim, int image_size, int channels, std::uint64_t init_seed);

    ArchId arch() const { return arch_; }
    int latent_dim() const { return latent_dim_; }
    int image_size() const { return image_size_; }
    int channels() const { return channels_; }

    Lineage& lineage() { return lineage_; }
    const Lineage& lineage() const { return lineage_; }
    const std::string& config_hash() const { return config_hash_; }
    int trained_steps() const { return trained_steps_; }

    nn::Sequential& network() { return network_; }
    const nn::Sequential& network() const { return network_; }
    std::string weights_hash() const;

    void set_training_record(std::string config_hash, int steps) {
        config_hash_ = std::move(config_hash);
        trained_steps_ = steps;
    }

private:
    ArchId arch_;
    int latent_dim_, image_size_, channels_;
    Lineage lineage_;
    std::string config_hash_;
    int trained_steps_ = 0;
    nn::Sequential network_;
};

nn::Sequential build_generator(ArchId arch, int latent_dim, int image_size, int channels, std::mt19937_64& rng);
nn::Sequential build_discriminator(int image_size, int channels, std::mt19937_64& rng);

struct CheckpointManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    double wall_time_s = 0.0;
};

struct Checkpoint {
    GeneratorModel model;
    int step = 0;
    CheckpointManifest manifest;
};

/// Training produced a non-finite loss. Carries the newest finite snapshot.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, Checkpoint last_good)
        : std::runtime_error(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const { return last_good_; }

private:
    Checkpoint last_good_;
};

struct TrainResult {
    GeneratorModel model;
    /// Step 0 plus one entry every `snapshot_every` steps, ascending.
    std::vector<Checkpoint> snapshots;
};

/// Optional per-step observer: (step, discriminator loss, generator loss).
using TrainObserver = std::function<void(int, double, double)>;

TrainResult train_gan(const data::ImageBatch& data, ArchId arch, int latent_dim, const TrainConfig& config,
                      const TrainObserver& observer = {});

/// Continues training `init` on `data` with a fresh discriminator.
TrainResult continue_training(GeneratorModel init, const data::ImageBatch& data, const TrainConfig& config,
                              const TrainObserver& observer = {});

/// Images in [0,1]; provenance is "gen:<model id>".
data::ImageBatch sample(const GeneratorModel& model, const data::LatentBatch& latents);

// ---- persistence

struct ModelManifest {
    std::string arch_id;
    int latent_dim = 0;
    int image_size = 0;
    int channels = 0;
    Lineage lineage;
    std::string config_hash;
    std::string content_hash;
    int step = 0;
    std::size_t parameter_count = 0;
};

nlohmann::json to_json(const Lineage& lineage);
Lineage lineage_from_json(const nlohmann::json& j);

/// Writes `dir/weights.bin` and `dir/manifest.json`.
void save_model(const GeneratorModel& model, const std::filesystem::path& dir, int step = -1);
/// Verifies the content hash; throws CorruptionError on mismatch or truncation.
GeneratorModel load_model(const std::filesystem::path& dir);
/// Reads only the manifest side-file.
ModelManifest inspect_model(const std::filesystem::path& dir);

// Shared weight-blob helpers (also used for classifier checkpoints).
void write_weight_blob(const std::filesystem::path& file, std::span<const float> weights);
/// Reads the blob and checks it against `expected_hash` when non-empty.
std::vector<float> read_weight_blob(const std::filesystem::path& file, const std::string& expected_hash);
std::string weight_blob_hash(std::span<const float> weights);

}  // namespace ganguards::zoo
