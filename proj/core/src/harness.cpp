#include "ganguards/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <algorithm>

#include "ganguards/error.hpp"
#include "ganguards/extraction.hpp"
#include "ganguards/figures.hpp"
#include "ganguards/hash.hpp"

namespace ganguards::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kKindNames[] = {"verification", "obfuscation_sweep", "cross_arch_extraction", "generations",
                                  "sample_count_sweep", "adaptive_I", "adaptive_II", "finetune"};

void write_json(const fs::path& file, const json& j) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file);
    require(static_cast<bool>(out), "cannot write " + file.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& file) {
    std::ifstream in(file);
    require(static_cast<bool>(in), "cannot open " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw PreconditionError("malformed JSON in " + file.string() + ": " + e.what());
    }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    require(j.is_object(), where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        require(known.contains(key), "unknown field '" + key + "' in " + where);
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
    return out;
}

// Rethrows with the stage name so failures say where they happened.
template <class F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const zoo::DivergenceError& e) {
        throw zoo::DivergenceError("stage " + name + ": " + e.what(), e.last_good());
    } catch (const PreconditionError& e) {
        throw PreconditionError("stage " + name + ": " + e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------- config

std::string to_string(ExperimentKind kind) { return kKindNames[static_cast<int>(kind)]; }

ExperimentKind parse_kind(const std::string& text) {
    for (int i = 0; i < 8; ++i)
        if (text == kKindNames[i]) return static_cast<ExperimentKind>(i);
    throw PreconditionError("unknown experiment kind: " + text);
}

json to_json(const zoo::TrainConfig& c) {
    return json{{"steps", c.steps},
                {"batch_size", c.batch_size},
                {"lr_generator", c.lr_generator},
                {"lr_discriminator", c.lr_discriminator},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"loss", c.loss == zoo::LossKind::hinge ? "hinge" : "nonsaturating"},
                {"snapshot_every", c.snapshot_every},
                {"ema_decay", c.ema_decay},
                {"seed", c.seed}};
}

zoo::TrainConfig train_config_from_json(const json& j, zoo::TrainConfig c) {
    reject_unknown(j,
                   {"steps", "batch_size", "lr_generator", "lr_discriminator", "lr", "beta1", "beta2", "loss",
                    "snapshot_every", "ema_decay", "seed"},
                   "GAN training config");
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("lr")) c.lr_generator = c.lr_discriminator = j.at("lr").get<float>();
    c.lr_generator = j.value("lr_generator", c.lr_generator);
    c.lr_discriminator = j.value("lr_discriminator", c.lr_discriminator);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    if (j.contains("loss")) {
        const auto loss = j.at("loss").get<std::string>();
        require(loss == "hinge" || loss == "nonsaturating", "unknown GAN loss: " + loss);
        c.loss = loss == "hinge" ? zoo::LossKind::hinge : zoo::LossKind::nonsaturating;
    }
    c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.seed = j.value("seed", c.seed);
    return c;
}

std::vector<obfuscation::AttackSpec> ExperimentConfig::default_attacks(int finetune_steps) {
    using obfuscation::AttackKind;
    using obfuscation::Base;
    std::vector<obfuscation::AttackSpec> specs;
    specs.push_back({AttackKind::input_perturb, {}, Base::PS, std::nullopt});
    for (Base base : {Base::PS, Base::ME}) {
        for (int k = 0; k < 4; ++k)
            specs.push_back({static_cast<AttackKind>(k + 1), {obfuscation::kPaperMagnitudes[static_cast<std::size_t>(k)]},
                             base, std::nullopt});
        specs.push_back({AttackKind::fine_tune, {static_cast<double>(finetune_steps)}, base, std::nullopt});
    }
    return specs;
}

void ExperimentConfig::validate() const {
    require(dataset.count >= 3 && dataset.count % 3 == 0, "config: dataset count must be a positive multiple of 3");
    zoo::parse_arch(target_arch);
    require(latent_dim >= 1, "config: latent_dim must be >= 1");
    gan.validate();
    classifier.validate();
    require(budgets.query_budget >= gan.batch_size, "config: query budget must be at least the GAN batch size");
    require(budgets.per_class >= 1, "config: per-class budget must be >= 1");
    require(tau > 0 && tau < 1, "config: tau must be in (0,1)");
    require(m >= 1, "config: m must be >= 1");
    require(!trial_seeds.empty(), "config: at least one trial seed is required");
    require(std::set<std::uint64_t>(trial_seeds.begin(), trial_seeds.end()).size() == trial_seeds.size(),
            "config: trial seeds must be distinct");
    for (const auto& s : suspects)
        require(s == "PS" || s == "ME" || s == "Ind-a" || s == "Ind-b", "config: unknown suspect " + s);
    for (const auto& a : attacks) {
        a.validate();
        require(a.kind != obfuscation::AttackKind::adaptive_I,
                "config: adaptive_I is its own experiment kind, not a sweep entry");
    }
    for (const auto& a : attacker_archs) zoo::parse_arch(a);
    require(generations >= 1, "config: generations must be >= 1");
    require(!m_values.empty() && subsets >= 2, "config: sample-count sweep needs m values and >= 2 subsets");
    for (int v : m_values) require(v >= 1, "config: m values must be >= 1");
    for (const auto& s : strategies) obfuscation::parse_strategy(s);
    require(finetune_steps >= 0, "config: finetune_steps must be >= 0");
    require(snapshot_every >= 1 && gan.steps % snapshot_every == 0,
            "config: snapshot_every must divide the GAN step count");
    require(fid_samples >= 2, "config: fid_samples must be >= 2");
    require(tsne_per_group >= 4, "config: tsne_per_group must be >= 4");
}

json ExperimentConfig::to_json() const {
    json attacks_json = json::array();
    for (const auto& a : attacks) attacks_json.push_back(a.to_json());
    json clf = classifier.to_json();
    clf.erase("seed");
    json g = harness::to_json(gan);
    g.erase("seed");
    return json{{"kind", harness::to_string(kind)},
                {"name", name},
                {"dataset",
                 {{"family", dataset.family},
                  {"count", dataset.count},
                  {"size", dataset.size},
                  {"channels", dataset.channels}}},
                {"target_arch", target_arch},
                {"latent_dim", latent_dim},
                {"gan", g},
                {"budgets", {{"query_budget", budgets.query_budget}, {"per_class", budgets.per_class}}},
                {"classifier", clf},
                {"tau", tau},
                {"m", m},
                {"trial_seeds", trial_seeds},
                {"suspects", suspects},
                {"attacks", attacks_json},
                {"attacker_archs", attacker_archs},
                {"generations", generations},
                {"m_values", m_values},
                {"subsets", subsets},
                {"strategies", strategies},
                {"finetune_steps", finetune_steps},
                {"snapshot_every", snapshot_every},
                {"fid_samples", fid_samples},
                {"figures", figures},
                {"tsne", tsne.to_json()},
                {"tsne_per_group", tsne_per_group}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    reject_unknown(j,
                   {"kind", "name", "dataset", "target_arch", "latent_dim", "gan", "budgets", "classifier", "tau",
                    "m", "trial_seeds", "suspects", "attacks", "attacker_archs", "generations", "m_values", "subsets",
                    "strategies", "finetune_steps", "snapshot_every", "fid_samples", "figures", "tsne",
                    "tsne_per_group", "output_dir"},
                   "experiment config");
    ExperimentConfig c;
    try {
        require(j.contains("kind"), "experiment config needs a 'kind'");
        c.kind = parse_kind(j.at("kind").get<std::string>());
        c.name = j.value("name", harness::to_string(c.kind));
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            reject_unknown(d, {"family", "count", "size", "channels"}, "dataset");
            c.dataset.family = d.value("family", c.dataset.family);
            c.dataset.count = d.value("count", c.dataset.count);
            c.dataset.size = d.value("size", c.dataset.size);
            c.dataset.channels = d.value("channels", c.dataset.channels);
        }
        c.target_arch = j.value("target_arch", c.target_arch);
        c.latent_dim = j.value("latent_dim", c.latent_dim);
        if (j.contains("gan")) c.gan = train_config_from_json(j.at("gan"), c.gan);
        if (j.contains("budgets")) {
            const auto& b = j.at("budgets");
            reject_unknown(b, {"query_budget", "per_class"}, "budgets");
            c.budgets.query_budget = b.value("query_budget", c.budgets.query_budget);
            c.budgets.per_class = b.value("per_class", c.budgets.per_class);
        }
        if (j.contains("classifier")) {
            const auto& k = j.at("classifier");
            reject_unknown(k,
                           {"epochs", "learning_rate", "momentum", "batch_size", "holdout_fraction",
                            "pretrained_weights", "seed"},
                           "classifier config");
            c.classifier.epochs = k.value("epochs", c.classifier.epochs);
            c.classifier.learning_rate = k.value("learning_rate", c.classifier.learning_rate);
            c.classifier.momentum = k.value("momentum", c.classifier.momentum);
            c.classifier.batch_size = k.value("batch_size", c.classifier.batch_size);
            c.classifier.holdout_fraction = k.value("holdout_fraction", c.classifier.holdout_fraction);
            if (k.contains("pretrained_weights") && !k.at("pretrained_weights").is_null())
                c.classifier.pretrained_weights = k.at("pretrained_weights").get<std::string>();
        }
        c.tau = j.value("tau", c.tau);
        c.m = j.value("m", c.m);
        c.trial_seeds = j.value("trial_seeds", c.trial_seeds);
        c.suspects = j.value("suspects", c.suspects);
        if (j.contains("attacks"))
            for (const auto& a : j.at("attacks")) c.attacks.push_back(obfuscation::AttackSpec::from_json(a));
        c.attacker_archs = j.value("attacker_archs", c.attacker_archs);
        c.generations = j.value("generations", c.generations);
        c.m_values = j.value("m_values", c.m_values);
        c.subsets = j.value("subsets", c.subsets);
        c.strategies = j.value("strategies", c.strategies);
        c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
        c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
        c.fid_samples = j.value("fid_samples", c.fid_samples);
        c.figures = j.value("figures", c.figures);
        if (j.contains("tsne")) {
            const auto& t = j.at("tsne");
            reject_unknown(t,
                           {"method", "perplexity", "iterations", "learning_rate", "early_exaggeration",
                            "exaggeration_iterations", "seed"},
                           "tsne options");
            c.tsne.perplexity = t.value("perplexity", c.tsne.perplexity);
            c.tsne.iterations = t.value("iterations", c.tsne.iterations);
            c.tsne.learning_rate = t.value("learning_rate", c.tsne.learning_rate);
            c.tsne.early_exaggeration = t.value("early_exaggeration", c.tsne.early_exaggeration);
            c.tsne.exaggeration_iterations = t.value("exaggeration_iterations", c.tsne.exaggeration_iterations);
            c.tsne.seed = t.value("seed", c.tsne.seed);
        }
        c.tsne_per_group = j.value("tsne_per_group", c.tsne_per_group);
    } catch (const json::exception& e) {
        throw PreconditionError(std::string("experiment config: ") + e.what());
    }
    if (c.kind == ExperimentKind::obfuscation_sweep && c.attacks.empty())
        c.attacks = default_attacks(c.finetune_steps);
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& file) { return from_json(read_json(file)); }

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("name");
    j.erase("figures");
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------- cache

fs::path cache_root(const fs::path& out) {
    if (const char* env = std::getenv("GANGUARDS_CACHE"); env && *env) return fs::path(env);
    return out / "cache";
}

ArtifactCache::ArtifactCache(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

std::string ArtifactCache::key(const json& recipe) { return sha256_hex(recipe.dump()).substr(0, 24); }

fs::path ArtifactCache::slot(const json& recipe) const {
    return root_ / recipe.value("role", std::string("artifact")) / key(recipe);
}

bool ArtifactCache::ready(const fs::path& dir) const { return fs::exists(dir / "recipe.json"); }

fs::path ArtifactCache::staging_dir(const fs::path& dir) const {
    fs::path staging = dir;
    staging += ".staging";
    fs::remove_all(staging);
    fs::create_directories(staging);
    return staging;
}

void ArtifactCache::commit(const json& recipe, const fs::path& staging, const fs::path& dir) const {
    write_json(staging / "recipe.json", recipe);
    fs::remove_all(dir);
    fs::rename(staging, dir);
}

void ArtifactCache::discard(const fs::path& dir, const std::string& why) const {
    std::cerr << "warning: discarding cache entry " << dir.string() << ": " << why << '\n';
    fs::remove_all(dir);
}

// ---------------------------------------------------------------- trial

namespace {

struct Extraction {
    zoo::GeneratorModel model;
    std::vector<zoo::Checkpoint> snapshots;
};

void save_snapshots(const std::vector<zoo::Checkpoint>& snaps, const fs::path& dir) {
    json list = json::array();
    for (const auto& s : snaps) {
        const std::string name = "step-" + std::to_string(s.step);
        zoo::save_model(s.model, dir / name, s.step);
        list.push_back({{"step", s.step},
                        {"path", name},
                        {"config_hash", s.manifest.config_hash},
                        {"seed", s.manifest.seed},
                        {"wall_time_s", s.manifest.wall_time_s}});
    }
    write_json(dir / "snapshots.json", list);
}

std::vector<zoo::Checkpoint> load_snapshots(const fs::path& dir) {
    std::vector<zoo::Checkpoint> snaps;
    for (const auto& e : read_json(dir / "snapshots.json"))
        snaps.push_back(zoo::Checkpoint{zoo::load_model(dir / e.at("path").get<std::string>()), e.at("step").get<int>(),
                                        zoo::CheckpointManifest{e.at("config_hash").get<std::string>(),
                                                                e.at("seed").get<std::uint64_t>(),
                                                                e.at("wall_time_s").get<double>()}});
    return snaps;
}

}  // namespace

Trial::Trial(const ExperimentConfig& config, std::uint64_t seed, ArtifactCache& cache)
    : config_(config), seed_(seed), cache_(cache), seeds_(seed) {
    // Drawn up front so the recorded streams do not depend on cache hits.
    seeds_.stream("data");
    seeds_.stream("split");
}

json Trial::base_recipe() const {
    json g = to_json(config_.gan);
    g.erase("seed");
    return json{{"dataset",
                 {{"family", config_.dataset.family},
                  {"count", config_.dataset.count},
                  {"size", config_.dataset.size},
                  {"channels", config_.dataset.channels}}},
                {"trial_seed", seed_},
                {"target_arch", config_.target_arch},
                {"latent_dim", config_.latent_dim},
                {"gan", g}};
}

json Trial::recipe(const std::string& role, json extra) const {
    return json{{"format", 1}, {"role", role}, {"base", base_recipe()}, {"extra", std::move(extra)}};
}

zoo::TrainConfig Trial::gan_config(const std::string& label) {
    zoo::TrainConfig c = config_.gan;
    c.seed = stream(label + "/train");
    return c;
}

const data::DatasetSplit& Trial::split() {
    if (!split_) {
        const data::ShapeFamily family{config_.dataset.family, config_.dataset.size, config_.dataset.channels};
        split_ = stage("make-data", [&] {
            return data::split_three_way(data::make_procedural_dataset(family, config_.dataset.count, stream("data")),
                                         stream("split"));
        });
    }
    return *split_;
}

const zoo::GeneratorModel& Trial::cached_model(const std::string& role, const json& r,
                                               const std::function<zoo::GeneratorModel()>& build) {
    if (auto it = owned_.find(role); it != owned_.end()) return *it->second;
    auto model = std::make_unique<zoo::GeneratorModel>(cache_.get<zoo::GeneratorModel>(
        r, [&] { return stage(role, build); },
        [](const zoo::GeneratorModel& m, const fs::path& dir) { zoo::save_model(m, dir / "model"); },
        [](const fs::path& dir) { return zoo::load_model(dir / "model"); }));
    keys_[role] = ArtifactCache::key(r);
    models_[role] = model.get();
    return *(owned_[role] = std::move(model));
}

const zoo::GeneratorModel& Trial::target() {
    const zoo::TrainConfig cfg = gan_config("target");
    return cached_model("target", recipe("target"), [&] {
        return zoo::train_gan(split().part_I, zoo::parse_arch(config_.target_arch), config_.latent_dim, cfg).model;
    });
}

const DefenderArtifacts& Trial::defender() {
    if (defender_) return *defender_;
    const zoo::GeneratorModel& tar = target();
    protection::ProtectionConfig pc;
    pc.budgets = config_.budgets;
    pc.extraction_training = gan_config("defender/extraction");
    pc.independent_training = gan_config("defender/independent");
    pc.classifier = config_.classifier;
    pc.classifier.seed = stream("defender/classifier");
    pc.extraction_query_seed = stream("defender/extraction/queries");
    pc.sample_seed = stream("defender/samples");
    json clf = config_.classifier.to_json();
    clf.erase("seed");
    const json r = recipe("defender", {{"budgets", {{"query_budget", pc.budgets.query_budget},
                                                    {"per_class", pc.budgets.per_class}}},
                                       {"classifier", clf}});
    defender_.emplace(cache_.get<DefenderArtifacts>(
        r,
        [&] {
            return stage("build-protection", [&] {
                auto built = protection::build_protection(tar, split().part_III, pc, &split().part_I);
                return DefenderArtifacts{std::move(built.classifier), std::move(built.substitute),
                                         std::move(built.independent)};
            });
        },
        [](const DefenderArtifacts& d, const fs::path& dir) {
            protection::save_classifier(d.classifier, dir / "classifier");
            zoo::save_model(d.substitute, dir / "substitute");
            zoo::save_model(d.independent, dir / "independent");
        },
        [](const fs::path& dir) {
            return DefenderArtifacts{protection::load_classifier(dir / "classifier"),
                                     zoo::load_model(dir / "substitute"), zoo::load_model(dir / "independent")};
        }));
    keys_["defender"] = ArtifactCache::key(r);
    models_["defender/substitute"] = &defender_->substitute;
    models_["defender/independent"] = &defender_->independent;
    return *defender_;
}

const zoo::GeneratorModel& Trial::extracted(zoo::ArchId arch) {
    const std::string role = arch == zoo::parse_arch(config_.target_arch) ? "ME" : "ME[" + zoo::to_string(arch) + "]";
    if (auto it = owned_.find(role); it != owned_.end()) return *it->second;
    const zoo::GeneratorModel& victim = target();
    const std::string label = "attacker/" + zoo::to_string(arch);
    zoo::TrainConfig cfg = gan_config(label);
    cfg.snapshot_every = config_.snapshot_every;
    const std::uint64_t queries = stream(label + "/queries");
    const json r = recipe("extract", {{"arch", zoo::to_string(arch)},
                                      {"query_budget", config_.budgets.query_budget},
                                      {"snapshot_every", config_.snapshot_every}});
    Extraction ex = cache_.get<Extraction>(
        r,
        [&] {
            return stage("extract", [&] {
                auto res = extraction::extract_model(victim, config_.budgets.query_budget, arch, cfg, queries);
                for (auto& s : res.snapshots) s.model.lineage().role = zoo::Role::suspect;
                res.substitute.lineage().role = zoo::Role::suspect;
                return Extraction{std::move(res.substitute), std::move(res.snapshots)};
            });
        },
        [](const Extraction& e, const fs::path& dir) {
            zoo::save_model(e.model, dir / "model");
            save_snapshots(e.snapshots, dir / "snapshots");
        },
        [](const fs::path& dir) {
            return Extraction{zoo::load_model(dir / "model"), load_snapshots(dir / "snapshots")};
        });
    if (role == "ME") snapshots_ = std::move(ex.snapshots);
    auto model = std::make_unique<zoo::GeneratorModel>(std::move(ex.model));
    keys_[role] = ArtifactCache::key(r);
    models_[role] = model.get();
    return *(owned_[role] = std::move(model));
}

const std::vector<zoo::Checkpoint>& Trial::extraction_snapshots() {
    if (!snapshots_) extracted(zoo::parse_arch(config_.target_arch));
    return *snapshots_;
}

const zoo::GeneratorModel& Trial::suspect(const std::string& name) {
    if (name == "PS") {
        const zoo::GeneratorModel& t = target();
        models_["PS"] = &t;
        return t;
    }
    if (name == "ME") return extracted(zoo::parse_arch(config_.target_arch));
    if (name == "Ind-a" || name == "Ind-b") {
        const zoo::TrainConfig cfg = gan_config("honest/" + name);
        return cached_model(name, recipe(name), [&] {
            const data::ImageBatch& d = name == "Ind-a" ? split().part_II : split().part_I;
            zoo::GeneratorModel m =
                zoo::train_gan(d, zoo::parse_arch(config_.target_arch), config_.latent_dim, cfg).model;
            m.lineage().role = zoo::Role::suspect;
            return m;
        });
    }
    throw PreconditionError("unknown suspect: " + name);
}

const zoo::GeneratorModel& Trial::generation(int g) {
    require(g >= 1, "generation index must be >= 1");
    if (g == 1) return extracted(zoo::parse_arch(config_.target_arch));
    const std::string role = "generation-" + std::to_string(g);
    if (auto it = owned_.find(role); it != owned_.end()) return *it->second;
    const zoo::GeneratorModel& parent = generation(g - 1);
    const std::string parent_key = keys_.at(g == 2 ? "ME" : "generation-" + std::to_string(g - 1));
    const std::string label = "attacker/" + role;
    const zoo::TrainConfig cfg = gan_config(label);
    const std::uint64_t queries = stream(label + "/queries");
    const json r = recipe("generation", {{"generation", g},
                                         {"parent", parent_key},
                                         {"query_budget", config_.budgets.query_budget}});
    return cached_model(role, r, [&] {
        zoo::GeneratorModel m = extraction::extract_model(parent, config_.budgets.query_budget, parent.arch(), cfg,
                                                          queries)
                                    .substitute;
        m.lineage().role = zoo::Role::suspect;
        return m;
    });
}

const zoo::GeneratorModel& Trial::fine_tuned(const std::string& base, int steps) {
    require(base == "PS" || base == "ME", "fine-tuning applies to PS or ME, not " + base);
    const std::string role = base + "+FT:" + std::to_string(steps);
    if (auto it = owned_.find(role); it != owned_.end()) return *it->second;
    const zoo::GeneratorModel& stolen = suspect(base);
    const std::string base_key = keys_.at(base == "PS" ? "target" : "ME");
    zoo::TrainConfig cfg = gan_config("attacker/fine_tune/" + base);
    cfg.steps = steps;
    cfg.snapshot_every = std::max(1, steps);
    const json r = recipe("fine_tune", {{"base", base_key}, {"steps", steps}});
    return cached_model(role, r, [&] { return obfuscation::fine_tune(stolen, split().part_II, cfg, &split().part_I); });
}

const metrics::FamilyFeatureExtractor& Trial::extractor() {
    if (!extractor_) {
        metrics::FamilyFeatureExtractor::Options o;
        o.image_size = config_.dataset.size;
        o.channels = config_.dataset.channels;
        extractor_.emplace(stage("feature-extractor", [&] {
            return metrics::FamilyFeatureExtractor::cached(cache_.root() / "extractors", o);
        }));
    }
    return *extractor_;
}

data::ImageBatch Trial::samples(const zoo::GeneratorModel& model, const std::string& label, int count) {
    return zoo::sample(model, data::sample_prior(count, model.latent_dim(), stream("samples/" + label)));
}

protection::VerificationReport Trial::verify(const data::ImageBatch& samples, const std::string& ref) {
    return protection::perform_verification(classifier(), samples, config_.tau, config_.m, ref);
}

// ---------------------------------------------------------------- record

json ExperimentRecord::to_json(bool include_timestamps) const {
    json trials_json = json::array();
    for (const auto& t : trials) {
        json entries = json::array();
        for (std::size_t i = 0; i < t.reports.size(); ++i)
            entries.push_back({{"name", t.names[i]},
                               {"expected", t.labels[i] ? "stolen" : "honest"},
                               {"report", t.reports[i].to_json(include_timestamps)}});
        trials_json.push_back({{"seed", t.seed}, {"streams", t.streams}, {"entries", entries}, {"tables", t.tables}});
    }
    json j{{"config_hash", config_hash},
           {"kind", harness::to_string(kind)},
           {"config", config},
           {"trials", trials_json},
           {"summary", summary},
           {"figures", figures}};
    if (include_timestamps) j["wall_time_s"] = wall_time_s;
    return j;
}

ExperimentRecord ExperimentRecord::from_json(const json& j) {
    ExperimentRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.kind = parse_kind(j.at("kind").get<std::string>());
    r.config = j.at("config");
    for (const auto& t : j.at("trials")) {
        TrialRecord tr;
        tr.seed = t.at("seed").get<std::uint64_t>();
        tr.streams = t.value("streams", std::map<std::string, std::uint64_t>{});
        for (const auto& e : t.at("entries")) {
            tr.names.push_back(e.at("name").get<std::string>());
            tr.labels.push_back(e.at("expected").get<std::string>() == "stolen" ? 1 : 0);
            tr.reports.push_back(protection::VerificationReport::from_json(e.at("report")));
        }
        tr.tables = t.value("tables", json::object());
        r.trials.push_back(std::move(tr));
    }
    r.summary = j.value("summary", json::object());
    r.figures = j.value("figures", std::vector<std::string>{});
    r.wall_time_s = j.value("wall_time_s", 0.0);
    return r;
}

namespace {

void add(TrialRecord& t, const std::string& name, int label, protection::VerificationReport report) {
    t.names.push_back(name);
    t.labels.push_back(label);
    t.reports.push_back(std::move(report));
}

json tsne_table(Trial& trial, const ExperimentConfig& c) {
    const int k = c.tsne_per_group;
    const std::vector<std::pair<std::string, int>> sources{{"PS", 0}, {"ME", 1}, {"Ind-a", 2}, {"Ind-b", 2}};
    std::vector<FeatureMatrix> parts;
    std::vector<int> groups;
    for (const auto& [name, group] : sources) {
        const int count = group == 2 ? k / 2 : k;
        parts.push_back(trial.classifier().penultimate_features(
            trial.samples(trial.suspect(name), "tsne/" + name, count)));
        groups.insert(groups.end(), static_cast<std::size_t>(count), group);
    }
    FeatureMatrix all(static_cast<int>(groups.size()), parts[0].cols);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.values.begin(), p.values.end(), all.values.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p.values.size();
    }
    embedding::TsneOptions opts = c.tsne;
    opts.seed = trial.stream("tsne/init");
    const FeatureMatrix y = embedding::tsne(all, opts);
    std::vector<int> stolen(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) stolen[i] = groups[i] < 2 ? 1 : 0;
    json points = json::array();
    for (int i = 0; i < y.rows; ++i) points.push_back({y.at(i, 0), y.at(i, 1), groups[static_cast<std::size_t>(i)]});
    return json{{"groups", {"PS", "ME", "Ind"}},
                {"points", points},
                {"silhouette_embedding", embedding::silhouette(y, stolen)},
                {"silhouette_features", embedding::silhouette(all, stolen)},
                {"options", opts.to_json()}};
}

void run_verification(Trial& trial, const ExperimentConfig& c, TrialRecord& rec, bool with_tsne) {
    std::vector<protection::VerificationReport> reports;
    std::vector<int> labels;
    for (const auto& name : c.suspects) {
        const int label = name == "PS" || name == "ME" ? 1 : 0;
        auto report = trial.verify(trial.samples(trial.suspect(name), "verify/" + name, c.m), name);
        reports.push_back(report);
        labels.push_back(label);
        add(rec, name, label, std::move(report));
    }
    rec.tables["zoo"] = metrics::suspect_zoo_report(reports, labels, c.suspects).to_json();
    rec.tables["holdout_accuracy"] = trial.classifier().manifest().holdout_accuracy;
    if (with_tsne) rec.tables["tsne"] = tsne_table(trial, c);
}

void run_obfuscation(Trial& trial, const ExperimentConfig& c, TrialRecord& rec) {
    using obfuscation::AttackKind;
    std::map<std::string, data::ImageBatch> clean;
    auto clean_samples = [&](const std::string& base) -> const data::ImageBatch& {
        if (!clean.contains(base)) {
            clean.emplace(base, trial.samples(trial.suspect(base), "attack/" + base + "/clean", c.m));
            add(rec, base, 1, trial.verify(clean.at(base), base));
        }
        return clean.at(base);
    };
    for (const auto& spec : c.attacks) {
        const std::string base = obfuscation::to_string(spec.base);
        const data::ImageBatch& x = clean_samples(base);
        std::string name;
        data::ImageBatch y;
        int label = 1;
        switch (spec.kind) {
            case AttackKind::input_perturb:
                name = base + "+Inp";
                y = obfuscation::input_perturb(trial.suspect(base), c.m, trial.stream("attack/" + name + "/latents"));
                break;
            case AttackKind::oup_a_noise:
            case AttackKind::oup_b_filter:
            case AttackKind::oup_c_blur:
            case AttackKind::oup_d_jpeg: {
                const auto kind = static_cast<obfuscation::OutputKind>(static_cast<int>(spec.kind) - 1);
                std::ostringstream tag;
                tag << base << "+Oup-" << obfuscation::to_char(kind) << ":" << spec.magnitudes[0];
                name = tag.str();
                y = obfuscation::output_perturb(x, kind, spec.magnitudes[0], trial.stream("attack/" + name + "/noise"));
                break;
            }
            case AttackKind::fine_tune: {
                const int steps = spec.magnitudes.empty() ? c.finetune_steps : static_cast<int>(spec.magnitudes[0]);
                name = base + "+FT:" + std::to_string(steps);
                y = trial.samples(trial.fine_tuned(base, steps), "attack/" + name, c.m);
                label = steps == 0 ? 1 : 0;
                break;
            }
            case AttackKind::adaptive_II:
                name = base + "+AdaII-" + obfuscation::to_string(*spec.strategy);
                y = obfuscation::adaptive_attack_II(x, *spec.strategy, trial.stream("attack/" + name + "/noise"));
                break;
            case AttackKind::adaptive_I:
                throw PreconditionError("adaptive_I is not a sweep entry");
        }
        add(rec, name, label, trial.verify(y, name));
    }
    rec.tables["overwrite"] = obfuscation::overwrite_attack().to_json();
}

void run_cross_arch(Trial& trial, const ExperimentConfig& c, TrialRecord& rec) {
    const auto target_samples = trial.samples(trial.target(), "fidelity/target", c.fid_samples);
    const auto target_features = trial.extractor().features(target_samples);
    json rows = json::array();
    for (const auto& a : c.attacker_archs) {
        const zoo::GeneratorModel& model = trial.extracted(zoo::parse_arch(a));
        const std::string name = "ME[" + a + "]";
        auto report = trial.verify(trial.samples(model, "verify/" + name, c.m), name);
        const auto fid = metrics::fid_from_features(
            trial.extractor().features(trial.samples(model, "fidelity/" + name, c.fid_samples)), target_features,
            trial.extractor().id());
        rows.push_back({{"arch", a}, {"fid_to_target", fid.to_json()}, {"confidence", report.confidence_score}});
        add(rec, name, 1, std::move(report));
    }
    rec.tables["cross_arch"] = rows;
}

void run_generations(Trial& trial, const ExperimentConfig& c, TrialRecord& rec) {
    const auto target_features =
        trial.extractor().features(trial.samples(trial.target(), "fidelity/target", c.fid_samples));
    json rows = json::array();
    for (int g = 1; g <= c.generations; ++g) {
        const zoo::GeneratorModel& model = trial.generation(g);
        const std::string name = "gen-" + std::to_string(g);
        auto report = trial.verify(trial.samples(model, "verify/" + name, c.m), name);
        const auto fid = metrics::fid_from_features(
            trial.extractor().features(trial.samples(model, "fidelity/" + name, c.fid_samples)), target_features,
            trial.extractor().id());
        rows.push_back({{"generation", g},
                        {"model_id", model.lineage().id},
                        {"fid_to_target", fid.to_json()},
                        {"confidence", report.confidence_score},
                        {"decision", report.decision}});
        add(rec, name, 1, std::move(report));
    }
    rec.tables["generations"] = rows;
}

void run_sample_count(Trial& trial, const ExperimentConfig& c, TrialRecord& rec) {
    const int largest = *std::max_element(c.m_values.begin(), c.m_values.end());
    const int pool = largest * c.subsets;
    constexpr int kChunk = 2000;
    json per_suspect = json::object();
    for (const auto& name : c.suspects) {
        const zoo::GeneratorModel& model = trial.suspect(name);
        std::vector<std::uint8_t> bits;
        bits.reserve(static_cast<std::size_t>(pool));
        for (int first = 0, chunk = 0; first < pool; first += kChunk, ++chunk) {
            const int count = std::min(kChunk, pool - first);
            const auto b = protection::predict_batch(
                trial.classifier(),
                trial.samples(model, "sweep/" + name + "/" + std::to_string(chunk), count));
            bits.insert(bits.end(), b.begin(), b.end());
        }
        json rows = json::array();
        for (int m : c.m_values) {
            std::vector<double> conf;
            for (int j = 0; j < c.subsets; ++j)
                conf.push_back(protection::confidence_score(
                    std::span<const std::uint8_t>(bits).subspan(static_cast<std::size_t>(j) * m, static_cast<std::size_t>(m))));
            const double mean = std::accumulate(conf.begin(), conf.end(), 0.0) / static_cast<double>(conf.size());
            double var = 0.0;
            for (double v : conf) var += (v - mean) * (v - mean);
            const double stddev = std::sqrt(var / static_cast<double>(conf.size()));
            rows.push_back({{"m", m}, {"mean", mean}, {"std", stddev}, {"confidences", conf}});
        }
        per_suspect[name] = rows;
        auto report = trial.verify(trial.samples(model, "verify/" + name, c.m), name);
        add(rec, name, name == "PS" || name == "ME" ? 1 : 0, std::move(report));
    }
    rec.tables["sample_count"] = per_suspect;
}

void run_adaptive_I(Trial& trial, const ExperimentConfig& c, TrialRecord& rec) {
    const auto curve = obfuscation::adaptive_attack_I(trial.extraction_snapshots(), trial.target(), trial.classifier(),
                                                      trial.extractor(), c.tau, c.m, c.fid_samples,
                                                      trial.stream("adaptive_I/samples"));
    json rows = json::array();
    for (const auto& p : curve) {
        rows.push_back({{"step", p.step},
                        {"past_first_decile", p.step > c.gan.steps / 10},
                        {"fid_to_victim", p.fidelity.to_json()},
                        {"confidence", p.report.confidence_score},
                        {"decision", p.report.decision}});
        add(rec, "ME@" + std::to_string(p.step), 1, p.report);
    }
    rec.tables["adaptive_I"] = rows;
}

void run_adaptive_II(Trial& trial, const ExperimentConfig& c, TrialRecord& rec) {
    json rows = json::array();
    for (const std::string base : {"PS", "ME"}) {
        const auto x = trial.samples(trial.suspect(base), "adaptive_II/" + base, c.m);
        add(rec, base, 1, trial.verify(x, base));
        for (const auto& s : c.strategies) {
            const auto strategy = obfuscation::parse_strategy(s);
            const std::string name = base + "+AdaII-" + s;
            const auto y = obfuscation::adaptive_attack_II(x, strategy, trial.stream("attack/" + name + "/noise"));
            auto report = trial.verify(y, name);
            const auto mags = obfuscation::strategy_magnitudes(strategy);
            rows.push_back({{"base", base},
                            {"strategy", s},
                            {"magnitudes", mags},
                            {"mean_ssim", metrics::mean_ssim(x, y)},
                            {"confidence", report.confidence_score},
                            {"decision", report.decision}});
            add(rec, name, 1, std::move(report));
        }
    }
    rec.tables["adaptive_II"] = rows;
    rec.tables["ssim_config"] = metrics::SsimConfig{}.to_json();
}

void run_finetune(Trial& trial, const ExperimentConfig& c, TrialRecord& rec) {
    for (const std::string base : {"PS", "ME"}) {
        add(rec, base, 1, trial.verify(trial.samples(trial.suspect(base), "verify/" + base, c.m), base));
        const std::string name = base + "+FT:" + std::to_string(c.finetune_steps);
        add(rec, name, c.finetune_steps == 0 ? 1 : 0,
            trial.verify(trial.samples(trial.fine_tuned(base, c.finetune_steps), "verify/" + name, c.m), name));
    }
}

json summarize(const ExperimentRecord& r) {
    json per_name = json::object();
    std::vector<std::string> order;
    for (const auto& t : r.trials)
        for (std::size_t i = 0; i < t.names.size(); ++i) {
            const auto& n = t.names[i];
            if (!per_name.contains(n)) {
                order.push_back(n);
                per_name[n] = {{"expected", t.labels[i] ? "stolen" : "honest"},
                               {"trials", 0},
                               {"stolen", 0},
                               {"correct", 0},
                               {"confidences", json::array()}};
            }
            auto& e = per_name[n];
            e["trials"] = e["trials"].get<int>() + 1;
            e["stolen"] = e["stolen"].get<int>() + t.reports[i].decision;
            e["correct"] = e["correct"].get<int>() + (t.reports[i].decision == t.labels[i] ? 1 : 0);
            e["confidences"].push_back(t.reports[i].confidence_score);
        }
    json rows = json::array();
    for (const auto& n : order) {
        json e = per_name[n];
        e["name"] = n;
        rows.push_back(e);
    }
    return json{{"suspects", rows}};
}

void write_outputs(const ExperimentRecord& record, const std::vector<std::unique_ptr<Trial>>& trials,
                   const fs::path& out) {
    json model_manifest = json::array(), clf_manifest = json::array(), report_manifest = json::array();
    for (const auto& trial : trials) {
        const std::string tdir = "trial-" + std::to_string(trial->seed());
        for (const auto& [role, model] : trial->models()) {
            const fs::path rel = fs::path(tdir) / sanitize(role);
            zoo::save_model(*model, out / "models" / rel);
            model_manifest.push_back({{"trial", trial->seed()},
                                      {"role", role},
                                      {"id", model->lineage().id},
                                      {"path", rel.string()},
                                      {"cache_key", trial->keys().contains(role) ? trial->keys().at(role) : ""}});
        }
        if (trial->keys().contains("defender")) {
            const fs::path rel = fs::path(tdir);
            protection::save_classifier(trial->classifier(), out / "classifiers" / rel);
            clf_manifest.push_back({{"trial", trial->seed()},
                                    {"path", rel.string()},
                                    {"manifest_hash", trial->classifier().manifest_hash()},
                                    {"holdout_accuracy", trial->classifier().manifest().holdout_accuracy},
                                    {"cache_key", trial->keys().at("defender")}});
        }
    }
    for (const auto& t : record.trials) {
        const std::string tdir = "trial-" + std::to_string(t.seed);
        for (std::size_t i = 0; i < t.reports.size(); ++i) {
            const fs::path rel = fs::path(tdir) / (std::to_string(i) + "-" + sanitize(t.names[i]) + ".json");
            protection::save_report(t.reports[i], out / "reports" / rel);
            report_manifest.push_back({{"trial", t.seed},
                                       {"name", t.names[i]},
                                       {"path", rel.string()},
                                       {"confidence", t.reports[i].confidence_score},
                                       {"decision", t.reports[i].decision ? "stolen" : "honest"}});
        }
    }
    write_json(out / "models" / "manifest.json", model_manifest);
    write_json(out / "classifiers" / "manifest.json", clf_manifest);
    write_json(out / "reports" / "manifest.json", report_manifest);
}

}  // namespace

ExperimentRecord run_experiment(const ExperimentConfig& config, const fs::path& out, ArtifactCache& cache,
                                std::ostream* log) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    ExperimentRecord record;
    record.config_hash = config.hash();
    record.kind = config.kind;
    record.config = config.to_json();

    std::vector<std::unique_ptr<Trial>> trials;
    for (std::size_t i = 0; i < config.trial_seeds.size(); ++i) {
        const std::uint64_t seed = config.trial_seeds[i];
        if (log) *log << "[" << to_string(config.kind) << "] trial seed " << seed << std::endl;
        trials.push_back(std::make_unique<Trial>(config, seed, cache));
        Trial& trial = *trials.back();
        TrialRecord rec;
        rec.seed = seed;
        switch (config.kind) {
            case ExperimentKind::verification: run_verification(trial, config, rec, i == 0); break;
            case ExperimentKind::obfuscation_sweep: run_obfuscation(trial, config, rec); break;
            case ExperimentKind::cross_arch_extraction: run_cross_arch(trial, config, rec); break;
            case ExperimentKind::generations: run_generations(trial, config, rec); break;
            case ExperimentKind::sample_count_sweep: run_sample_count(trial, config, rec); break;
            case ExperimentKind::adaptive_I: run_adaptive_I(trial, config, rec); break;
            case ExperimentKind::adaptive_II: run_adaptive_II(trial, config, rec); break;
            case ExperimentKind::finetune: run_finetune(trial, config, rec); break;
        }
        rec.streams = trial.seeds().streams();
        if (log)
            for (std::size_t k = 0; k < rec.reports.size(); ++k)
                *log << "  " << rec.names[k] << ": confidence " << rec.reports[k].confidence_score << " -> "
                     << (rec.reports[k].decision ? "stolen" : "honest") << std::endl;
        record.trials.push_back(std::move(rec));
    }
    record.summary = summarize(record);
    record.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    fs::create_directories(out);
    write_outputs(record, trials, out);
    if (config.figures)
        for (const auto& f : emit_figures(record, out)) record.figures.push_back(fs::relative(f, out).string());
    else
        write_json(out / "figures" / "manifest.json", json::array());
    save_record(record, out);
    return record;
}

// ---------------------------------------------------------------- figures

std::vector<fs::path> emit_figures(const ExperimentRecord& record, const fs::path& out) {
    const fs::path dir = out / "figures";
    fs::create_directories(dir);
    std::vector<fs::path> files;
    json manifest = json::array();
    const double tau = record.config.value("tau", protection::kDefaultTau);
    auto note = [&](const fs::path& file, const std::string& source) {
        files.push_back(file);
        manifest.push_back({{"file", file.filename().string()}, {"data", source}});
    };

    auto confidence_bars = [&](const std::string& file, const std::string& title) {
        if (record.trials.empty() || record.trials[0].names.empty()) return;
        const auto& names = record.trials[0].names;
        std::vector<figures::Series> series;
        for (const auto& t : record.trials) {
            figures::Series s{"seed " + std::to_string(t.seed), {}, {}};
            for (const auto& n : names) {
                const auto it = std::find(t.names.begin(), t.names.end(), n);
                s.values.push_back(it == t.names.end() ? 0.0
                                                       : t.reports[static_cast<std::size_t>(it - t.names.begin())]
                                                             .confidence_score);
            }
            series.push_back(std::move(s));
        }
        figures::Axes axes{title, "suspect", "confidence score", 0.0, 1.0, tau, "tau", false};
        figures::bar_chart(dir / file, names, series, axes);
        note(dir / file, "trials[*].entries[*].report.confidence_score");
    };

    auto table_lines = [&](const std::string& file, const std::string& title, const std::string& table,
                           const std::string& xkey, const std::string& ykey, const std::string& xlabel,
                           const std::string& ylabel, bool threshold) {
        std::vector<double> x;
        std::vector<figures::Series> series;
        for (const auto& t : record.trials) {
            if (!t.tables.contains(table)) continue;
            figures::Series s{"seed " + std::to_string(t.seed), {}, {}};
            std::vector<double> tx;
            for (const auto& row : t.tables.at(table)) {
                tx.push_back(row.at(xkey).get<double>());
                const json& v = row.at(ykey);
                s.values.push_back(v.is_object() ? v.at("value").get<double>() : v.get<double>());
            }
            if (x.empty()) x = tx;
            if (tx == x) series.push_back(std::move(s));
        }
        if (x.empty() || series.empty()) return;
        figures::Axes axes{title, xlabel, ylabel, {}, {}, {}, "", false};
        if (threshold) {
            axes.y_min = 0.0;
            axes.y_max = 1.0;
            axes.reference = tau;
            axes.reference_label = "tau";
        }
        figures::line_chart(dir / file, x, series, axes);
        note(dir / file, "trials[*].tables." + table);
    };

    switch (record.kind) {
        case ExperimentKind::verification: {
            confidence_bars("verification.svg", "Verification of the suspect zoo");
            if (!record.trials.empty() && record.trials[0].tables.contains("tsne")) {
                const auto& t = record.trials[0].tables.at("tsne");
                std::vector<figures::Point> pts;
                for (const auto& p : t.at("points")) pts.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<int>()});
                std::ostringstream title;
                title << "T-SNE of penultimate features (silhouette " << t.at("silhouette_embedding").get<double>()
                      << ")";
                figures::scatter(dir / "tsne.svg", pts, t.at("groups").get<std::vector<std::string>>(),
                                 figures::Axes{title.str(), "", "", {}, {}, {}, "", false});
                note(dir / "tsne.svg", "trials[0].tables.tsne");
            }
            break;
        }
        case ExperimentKind::obfuscation_sweep: confidence_bars("obfuscation.svg", "Obfuscated suspects"); break;
        case ExperimentKind::cross_arch_extraction:
            confidence_bars("cross_arch.svg", "Extraction with different attacker architectures");
            break;
        case ExperimentKind::finetune: confidence_bars("finetune.svg", "Fine-tuned suspects"); break;
        case ExperimentKind::adaptive_II: confidence_bars("adaptive_II.svg", "Combined output perturbations"); break;
        case ExperimentKind::generations:
            table_lines("generations_confidence.svg", "Confidence over extraction generations", "generations",
                        "generation", "confidence", "generation", "confidence score", true);
            table_lines("generations_fid.svg", "Fidelity over extraction generations", "generations", "generation",
                        "fid_to_target", "generation", "FID to target", false);
            break;
        case ExperimentKind::adaptive_I:
            table_lines("adaptive_I_confidence.svg", "Confidence of extraction snapshots", "adaptive_I", "step",
                        "confidence", "training step", "confidence score", true);
            table_lines("adaptive_I_fid.svg", "Fidelity of extraction snapshots", "adaptive_I", "step",
                        "fid_to_victim", "training step", "FID to victim", false);
            break;
        case ExperimentKind::sample_count_sweep: {
            if (record.trials.empty() || !record.trials[0].tables.contains("sample_count")) break;
            const auto& table = record.trials[0].tables.at("sample_count");
            std::vector<double> x;
            std::vector<figures::Series> series;
            for (const auto& [name, rows] : table.items()) {
                figures::Series s{name, {}, {}};
                std::vector<double> tx;
                for (const auto& row : rows) {
                    tx.push_back(row.at("m").get<double>());
                    s.values.push_back(row.at("mean").get<double>());
                    s.errors.push_back(row.at("std").get<double>());
                }
                x = tx;
                series.push_back(std::move(s));
            }
            figures::Axes axes{"Confidence vs number of samples (mean +/- std over subsets)", "m", "confidence score",
                               0.0, 1.0, tau, "tau", true};
            figures::line_chart(dir / "sample_count.svg", x, series, axes);
            note(dir / "sample_count.svg", "trials[0].tables.sample_count");
            break;
        }
    }
    // The SSIM ledger is a per-strategy table, drawn as bars.
    if (record.kind == ExperimentKind::adaptive_II && !record.trials.empty()) {
        std::vector<std::string> cats;
        std::vector<figures::Series> series;
        for (const auto& t : record.trials) {
            if (!t.tables.contains("adaptive_II")) continue;
            figures::Series s{"seed " + std::to_string(t.seed), {}, {}};
            std::vector<std::string> tc;
            for (const auto& row : t.tables.at("adaptive_II")) {
                tc.push_back(row.at("base").get<std::string>() + " " + row.at("strategy").get<std::string>());
                s.values.push_back(row.at("mean_ssim").get<double>());
            }
            if (cats.empty()) cats = tc;
            if (tc == cats) series.push_back(std::move(s));
        }
        if (!cats.empty()) {
            figures::bar_chart(dir / "adaptive_II_ssim.svg", cats, series,
                               figures::Axes{"Mean SSIM(original, perturbed)", "strategy", "SSIM", 0.0, 1.0, {}, "",
                                             false});
            note(dir / "adaptive_II_ssim.svg", "trials[*].tables.adaptive_II[*].mean_ssim");
        }
    }
    write_json(dir / "manifest.json", manifest);
    return files;
}

void save_record(const ExperimentRecord& record, const fs::path& out) {
    write_json(out / "record.json", record.to_json());
}

ExperimentRecord load_record(const fs::path& out) {
    const fs::path file = fs::is_directory(out) ? out / "record.json" : out;
    return ExperimentRecord::from_json(read_json(file));
}

}  // namespace ganguards::harness
