#include "ganguards/gan.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "ganguards/error.hpp"
#include "ganguards/hash.hpp"

namespace ganguards::zoo {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ArchId arch) {
    switch (arch) {
        case ArchId::gan_a: return "gan-a";
        case ArchId::gan_b: return "gan-b";
        case ArchId::gan_c: return "gan-c";
    }
    return "unknown";
}

ArchId parse_arch(const std::string& text) {
    if (text == "gan-a") return ArchId::gan_a;
    if (text == "gan-b") return ArchId::gan_b;
    if (text == "gan-c") return ArchId::gan_c;
    throw PreconditionError("unknown architecture: " + text);
}

std::string to_string(Role role) {
    switch (role) {
        case Role::target: return "target";
        case Role::substitute: return "substitute";
        case Role::independent: return "independent";
        case Role::suspect: return "suspect";
    }
    return "unknown";
}

Role parse_role(const std::string& text) {
    if (text == "target") return Role::target;
    if (text == "substitute") return Role::substitute;
    if (text == "independent") return Role::independent;
    if (text == "suspect") return Role::suspect;
    throw PreconditionError("unknown role: " + text);
}

void validate_lineage(const Lineage& lineage) {
    require(lineage.generation_index >= 0, "lineage: negative generation index");
    require((lineage.generation_index == 0) == !lineage.parent_id.has_value(),
            "lineage: generation_index must be 0 exactly when there is no parent");
    std::set<std::string> seen{lineage.id};
    for (const auto& id : lineage.ancestry) require(seen.insert(id).second, "lineage: ancestry revisits " + id);
    if (lineage.parent_id)
        require(!lineage.ancestry.empty() && lineage.ancestry.back() == *lineage.parent_id,
                "lineage: ancestry must end with the parent");
}

void TrainConfig::validate() const {
    require(steps > 0, "train config: steps must be positive");
    require(batch_size > 0, "train config: batch_size must be positive");
    require(lr_generator > 0 && lr_discriminator > 0, "train config: learning rates must be positive");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train config: Adam betas must be in [0,1)");
    require(batch_size % 4 == 0, "train config: batch_size must be a multiple of 4");
    require(ema_decay >= 0 && ema_decay < 1, "train config: ema_decay must be in [0,1)");
    require(snapshot_every > 0, "train config: snapshot_every must be positive");
    require(steps % snapshot_every == 0, "train config: snapshot_every must divide steps");
}

std::string TrainConfig::hash() const {
    const json j{{"steps", steps},
                 {"batch_size", batch_size},
                 {"lr_generator", lr_generator},
                 {"lr_discriminator", lr_discriminator},
                 {"beta1", beta1},
                 {"beta2", beta2},
                 {"loss", loss == LossKind::hinge ? "hinge" : "nonsaturating"},
                 {"snapshot_every", snapshot_every},
                 {"ema_decay", ema_decay},
                 {"seed", seed}};
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------- architectures

namespace {

int upsampling_steps(int image_size, int base) {
    int steps = 0;
    for (int s = base; s < image_size; s *= 2) ++steps;
    require(base << steps == image_size && steps >= 1,
            "image size must be a power-of-two multiple of " + std::to_string(base));
    return steps;
}

}  // namespace

nn::Sequential build_generator(ArchId arch, int latent_dim, int image_size, int channels, std::mt19937_64& rng) {
    using namespace nn;
    Sequential g;
    switch (arch) {
        case ArchId::gan_a: {
            const int ups = upsampling_steps(image_size, 8);
            int width = 32;
            g.emplace<Linear>(latent_dim, width * 8 * 8, rng).emplace<ReLU>().emplace<Reshape>(width, 8, 8);
            for (int i = 0; i + 1 < ups; ++i) {
                const int next = std::max(16, width / 2);
                g.emplace<UpsampleNearest2x>().emplace<Conv2d>(width, next, 3, 1, 1, rng).emplace<ReLU>();
                width = next;
            }
            g.emplace<UpsampleNearest2x>().emplace<Conv2d>(width, channels, 3, 1, 1, rng, 1.0f).emplace<Tanh>();
            break;
        }
        case ArchId::gan_b: {
            const int ups = upsampling_steps(image_size, 4);
            int width = 64;
            g.emplace<Linear>(latent_dim, width * 4 * 4, rng)
                .emplace<Reshape>(width, 4, 4)
                .emplace<PixelNorm>()
                .emplace<LeakyReLU>();
            for (int i = 0; i + 1 < ups; ++i) {
                const int next = std::max(16, width / 2);
                g.emplace<ConvTranspose2d>(width, next, 4, 2, 1, rng).emplace<PixelNorm>().emplace<LeakyReLU>();
                width = next;
            }
            g.emplace<ConvTranspose2d>(width, channels, 4, 2, 1, rng, 1.0f).emplace<Tanh>();
            break;
        }
        case ArchId::gan_c: {
            const int ups = upsampling_steps(image_size, 8);
            int width = 32;
            g.emplace<Linear>(latent_dim, latent_dim, rng)
                .emplace<LeakyReLU>()
                .emplace<Linear>(latent_dim, latent_dim, rng)
                .emplace<LeakyReLU>()
                .emplace<Linear>(latent_dim, width * 8 * 8, rng)
                .emplace<Reshape>(width, 8, 8)
                .emplace<InstanceNorm>()
                .emplace<LeakyReLU>()
                .emplace<Conv2d>(width, width, 3, 1, 1, rng)
                .emplace<InstanceNorm>()
                .emplace<LeakyReLU>();
            for (int i = 0; i + 1 < ups; ++i) {
                const int next = std::max(16, width / 2);
                g.emplace<UpsampleNearest2x>()
                    .emplace<Conv2d>(width, next, 3, 1, 1, rng)
                    .emplace<InstanceNorm>()
                    .emplace<LeakyReLU>();
                width = next;
            }
            g.emplace<UpsampleNearest2x>().emplace<Conv2d>(width, channels, 3, 1, 1, rng, 1.0f).emplace<Tanh>();
            break;
        }
    }
    return g;
}

nn::Sequential build_discriminator(int image_size, int channels, std::mt19937_64& rng) {
    using namespace nn;
    const int downs = upsampling_steps(image_size, 4);
    Sequential d;
    int in = channels, width = 16;
    for (int i = 0; i < downs; ++i) {
        d.emplace<Conv2d>(in, width, 4, 2, 1, rng).emplace<LeakyReLU>();
        in = width;
        width *= 2;
    }
    d.emplace<MinibatchStdDev>(4).emplace<Reshape>((in + 1) * 16, 1, 1).emplace<Linear>((in + 1) * 16, 1, rng, 1.0f);
    return d;
}

// ---------------------------------------------------------------- model

GeneratorModel::GeneratorModel(ArchId arch, int latent_dim, int image_size, int channels, std::uint64_t init_seed)
    : arch_(arch), latent_dim_(latent_dim), image_size_(image_size), channels_(channels) {
    require(latent_dim >= 1, "generator: latent_dim must be >= 1");
    require(channels == 1 || channels == 3, "generator: channels must be 1 or 3");
    std::mt19937_64 rng(init_seed);
    network_ = build_generator(arch, latent_dim, image_size, channels, rng);
    lineage_.train_seed = init_seed;
}

std::string GeneratorModel::weights_hash() const { return weight_blob_hash(network_.weights()); }

// ---------------------------------------------------------------- training

namespace {

nn::Tensor to_signed(const nn::Tensor& unit) {
    nn::Tensor out = unit;
    for (float& v : out.values()) v = 2.0f * v - 1.0f;
    return out;
}

nn::Tensor normal_codes(int count, int dim, std::mt19937_64& rng) {
    nn::Tensor z(count, dim, 1, 1);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& v : z.values()) v = normal(rng);
    return z;
}

bool finite(double v) { return std::isfinite(v); }

TrainResult run_training(GeneratorModel model, const data::ImageBatch& data, const TrainConfig& config,
                         const TrainObserver& observer) {
    config.validate();
    data.validate();
    require(data.size() == model.image_size() && data.channels() == model.channels(),
            "training data geometry does not match the generator");

    const auto started = std::chrono::steady_clock::now();
    const std::string config_hash = config.hash();
    std::mt19937_64 rng(mix64(config.seed ^ 0x5eedULL));
    std::mt19937_64 d_init(mix64(config.seed ^ 0xd15cULL));
    nn::Sequential disc = build_discriminator(model.image_size(), model.channels(), d_init);
    nn::Sequential& gen = model.network();
    nn::Adam opt_g(config.lr_generator, config.beta1, config.beta2);
    nn::Adam opt_d(config.lr_discriminator, config.beta1, config.beta2);
    auto g_params = gen.params();
    auto d_params = disc.params();

    std::vector<float> ema = gen.weights();
    auto snapshot = [&](int step) {
        GeneratorModel copy = model;
        if (config.ema_decay > 0) copy.network().set_weights(ema);
        copy.set_training_record(config_hash, model.trained_steps() + step);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        return Checkpoint{std::move(copy), step, CheckpointManifest{config_hash, config.seed, wall}};
    };

    std::vector<Checkpoint> snapshots;
    snapshots.push_back(snapshot(0));

    const int b = config.batch_size;
    const int n = data.count();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    std::vector<int> batch_idx(static_cast<std::size_t>(b));
    std::vector<float> d_targets(static_cast<std::size_t>(2 * b));
    std::fill(d_targets.begin(), d_targets.begin() + b, 1.0f);
    std::fill(d_targets.begin() + b, d_targets.end(), 0.0f);

    for (int step = 1; step <= config.steps; ++step) {
        for (int i = 0; i < b; ++i) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch_idx[static_cast<std::size_t>(i)] = order[cursor++];
        }
        const nn::Tensor real = to_signed(data.select(batch_idx).pixels());
        const nn::Tensor fake = gen.infer(normal_codes(b, model.latent_dim(), rng));

        // Discriminator update on the joint real/fake batch.
        const nn::Tensor* both[] = {&real, &fake};
        disc.zero_grad();
        const nn::Tensor logits = disc.forward(nn::concat(both));
        nn::Tensor grad(logits.n(), 1, 1, 1);
        double d_loss = 0.0;
        if (config.loss == LossKind::nonsaturating) {
            d_loss = nn::bce_with_logits(logits, d_targets, grad);
        } else {
            const float scale = 1.0f / static_cast<float>(b);
            for (int i = 0; i < 2 * b; ++i) {
                const float l = logits.data()[i];
                const float margin = i < b ? 1.0f - l : 1.0f + l;
                if (margin > 0) {
                    d_loss += margin * scale;
                    grad.data()[i] = (i < b ? -1.0f : 1.0f) * scale;
                }
            }
        }
        disc.backward(grad);
        opt_d.step(d_params);

        // Generator update through the (frozen) discriminator.
        gen.zero_grad();
        const nn::Tensor gen_out = gen.forward(normal_codes(b, model.latent_dim(), rng));
        const nn::Tensor g_logits = disc.forward(gen_out);
        nn::Tensor g_grad(b, 1, 1, 1);
        double g_loss = 0.0;
        for (int i = 0; i < b; ++i) {
            const double l = g_logits.data()[i];
            if (config.loss == LossKind::nonsaturating) {
                g_loss += nn::softplus(-l) / b;
                g_grad.data()[i] = static_cast<float>(-1.0 / (1.0 + std::exp(l)) / b);
            } else {
                g_loss -= l / b;
                g_grad.data()[i] = -1.0f / static_cast<float>(b);
            }
        }
        gen.backward(disc.backward(g_grad));
        opt_g.step(g_params);
        if (config.ema_decay > 0) {
            // Short runs would otherwise be dominated by the initialization.
            const float decay = std::min(config.ema_decay, (1.0f + step) / (10.0f + step));
            std::size_t k = 0;
            for (const nn::Param* p : g_params)
                for (float w : p->value) {
                    ema[k] = decay * ema[k] + (1.0f - decay) * w;
                    ++k;
                }
        }

        if (!finite(d_loss) || !finite(g_loss)) {
            throw DivergenceError("GAN training diverged at step " + std::to_string(step) + " (non-finite loss)",
                                  snapshots.back());
        }
        if (observer) observer(step, d_loss, g_loss);
        if (step % config.snapshot_every == 0) snapshots.push_back(snapshot(step));
    }

    if (config.ema_decay > 0) gen.set_weights(ema);
    model.set_training_record(config_hash, model.trained_steps() + config.steps);
    return TrainResult{std::move(model), std::move(snapshots)};
}

std::string short_id(const std::string& prefix, const std::string& material) {
    return prefix + "-" + sha256_hex(material).substr(0, 12);
}

}  // namespace

TrainResult train_gan(const data::ImageBatch& data, ArchId arch, int latent_dim, const TrainConfig& config,
                      const TrainObserver& observer) {
    config.validate();
    GeneratorModel model(arch, latent_dim, data.size(), data.channels(), mix64(config.seed ^ 0x6e17ULL));
    Lineage& lin = model.lineage();
    lin.id = short_id(to_string(arch),
                      to_string(arch) + std::to_string(latent_dim) + data.content_hash() + config.hash());
    lin.role = Role::target;
    lin.generation_index = 0;
    lin.train_seed = config.seed;
    lin.train_data_ref = data.provenance();
    lin.derivation = "train";
    TrainResult result = run_training(std::move(model), data, config, observer);
    for (auto& s : result.snapshots) s.model.lineage() = result.model.lineage();
    return result;
}

TrainResult continue_training(GeneratorModel init, const data::ImageBatch& data, const TrainConfig& config,
                              const TrainObserver& observer) {
    config.validate();
    const std::string parent = init.lineage().id;
    Lineage lin = init.lineage();
    lin.id = short_id(to_string(init.arch()), parent + data.content_hash() + config.hash());
    init.lineage() = lin;
    TrainResult result = run_training(std::move(init), data, config, observer);
    for (auto& s : result.snapshots) s.model.lineage() = result.model.lineage();
    return result;
}

data::ImageBatch sample(const GeneratorModel& model, const data::LatentBatch& latents) {
    require(latents.latent_dim() == model.latent_dim(),
            "sample: latent dim " + std::to_string(latents.latent_dim()) + " does not match generator dim " +
                std::to_string(model.latent_dim()));
    require(latents.count() >= 1, "sample: empty latent batch");
    constexpr int kChunk = 256;
    nn::Tensor out(latents.count(), model.channels(), model.image_size(), model.image_size());
    for (int first = 0; first < latents.count(); first += kChunk) {
        const int count = std::min(kChunk, latents.count() - first);
        const nn::Tensor y = model.network().infer(latents.codes.slice(first, count));
        float* dst = out.sample(first);
        for (std::size_t i = 0; i < y.size(); ++i) dst[i] = std::clamp(0.5f * (y.data()[i] + 1.0f), 0.0f, 1.0f);
    }
    return data::ImageBatch(std::move(out), "gen:" + model.lineage().id);
}

// ---------------------------------------------------------------- persistence

namespace {
constexpr char kBlobMagic[8] = {'G', 'G', 'W', 'E', 'I', 'G', 'H', '1'};
}

std::string weight_blob_hash(std::span<const float> weights) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(weights.data()), weights.size_bytes()));
}

void write_weight_blob(const fs::path& file, std::span<const float> weights) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    const std::uint64_t count = weights.size();
    out.write(kBlobMagic, sizeof kBlobMagic);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(weights.data()), static_cast<std::streamsize>(weights.size_bytes()));
    if (!out) throw std::runtime_error("cannot write weights to " + file.string());
}

std::vector<float> read_weight_blob(const fs::path& file, const std::string& expected_hash) {
    std::ifstream in(file, std::ios::binary);
    require(static_cast<bool>(in), "cannot open weights " + file.string());
    char magic[sizeof kBlobMagic];
    std::uint64_t count = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in || std::memcmp(magic, kBlobMagic, sizeof magic) != 0)
        throw CorruptionError("weights header damaged: " + file.string());
    const auto expected_bytes = sizeof magic + sizeof count + count * sizeof(float);
    if (fs::file_size(file) != expected_bytes)
        throw CorruptionError("weights file truncated or padded: " + file.string());
    std::vector<float> weights(count);
    in.read(reinterpret_cast<char*>(weights.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw CorruptionError("weights file truncated: " + file.string());
    if (!expected_hash.empty() && weight_blob_hash(weights) != expected_hash)
        throw CorruptionError("weights content hash mismatch: " + file.string());
    return weights;
}

json to_json(const Lineage& l) {
    json j{{"id", l.id},
           {"role", to_string(l.role)},
           {"generation_index", l.generation_index},
           {"train_seed", l.train_seed},
           {"train_data_ref", l.train_data_ref},
           {"derivation", l.derivation},
           {"ancestry", l.ancestry},
           {"ancestry_arch", l.ancestry_arch}};
    j["parent_id"] = l.parent_id ? json(*l.parent_id) : json(nullptr);
    return j;
}

Lineage lineage_from_json(const json& j) {
    Lineage l;
    l.id = j.at("id").get<std::string>();
    l.role = parse_role(j.at("role").get<std::string>());
    l.generation_index = j.at("generation_index").get<int>();
    l.train_seed = j.at("train_seed").get<std::uint64_t>();
    l.train_data_ref = j.at("train_data_ref").get<std::string>();
    l.derivation = j.value("derivation", "train");
    l.ancestry = j.value("ancestry", std::vector<std::string>{});
    l.ancestry_arch = j.value("ancestry_arch", std::vector<std::string>{});
    if (!j.at("parent_id").is_null()) l.parent_id = j.at("parent_id").get<std::string>();
    return l;
}

void save_model(const GeneratorModel& model, const fs::path& dir, int step) {
    fs::create_directories(dir);
    const auto weights = model.network().weights();
    write_weight_blob(dir / "weights.bin", weights);
    const json manifest{{"format", "ganguards-generator-v1"},
                        {"arch_id", to_string(model.arch())},
                        {"latent_dim", model.latent_dim()},
                        {"image_size", model.image_size()},
                        {"channels", model.channels()},
                        {"lineage", to_json(model.lineage())},
                        {"config_hash", model.config_hash()},
                        {"content_hash", weight_blob_hash(weights)},
                        {"step", step < 0 ? model.trained_steps() : step},
                        {"parameter_count", weights.size()}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

ModelManifest inspect_model(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    require(static_cast<bool>(in), "no model manifest in " + dir.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw CorruptionError("unreadable model manifest in " + dir.string() + ": " + e.what());
    }
    ModelManifest m;
    m.arch_id = j.at("arch_id").get<std::string>();
    m.latent_dim = j.at("latent_dim").get<int>();
    m.image_size = j.at("image_size").get<int>();
    m.channels = j.at("channels").get<int>();
    m.lineage = lineage_from_json(j.at("lineage"));
    m.config_hash = j.at("config_hash").get<std::string>();
    m.content_hash = j.at("content_hash").get<std::string>();
    m.step = j.at("step").get<int>();
    m.parameter_count = j.at("parameter_count").get<std::size_t>();
    return m;
}

GeneratorModel load_model(const fs::path& dir) {
    const ModelManifest m = inspect_model(dir);
    const auto weights = read_weight_blob(dir / "weights.bin", m.content_hash);
    GeneratorModel model(parse_arch(m.arch_id), m.latent_dim, m.image_size, m.channels, 0);
    if (weights.size() != model.network().parameter_count())
        throw CorruptionError("weights do not fit architecture " + m.arch_id);
    model.network().set_weights(weights);
    model.lineage() = m.lineage;
    model.set_training_record(m.config_hash, m.step);
    return model;
}

}  // namespace ganguards::zoo
