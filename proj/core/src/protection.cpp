#include "ganguards/protection.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>
#include <set>

#include "ganguards/error.hpp"
#include "ganguards/extraction.hpp"
#include "ganguards/hash.hpp"

namespace ganguards::protection {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFeatureDim = 64;

nn::Sequential build_detector(int image_size, int channels, std::mt19937_64& rng) {
    using namespace nn;
    require(image_size % 4 == 0 && image_size >= 8, "classifier: image size must be a multiple of 4, >= 8");
    const int reduced = image_size / 4;
    auto body = std::make_unique<Sequential>();
    body->emplace<Conv2d>(32, 32, 3, 1, 1, rng).emplace<ReLU>().emplace<Conv2d>(32, 32, 3, 1, 1, rng, 0.5f);
    Sequential net;
    net.emplace<Conv2d>(channels, 16, 3, 2, 1, rng)
        .emplace<ReLU>()
        .emplace<Conv2d>(16, 32, 3, 2, 1, rng)
        .emplace<ReLU>()
        .emplace<Residual>(std::move(body))
        .emplace<ReLU>()
        .emplace<Reshape>(32 * reduced * reduced, 1, 1)
        .emplace<Linear>(32 * reduced * reduced, kFeatureDim, rng)
        .emplace<ReLU>()
        .emplace<Linear>(kFeatureDim, 1, rng, 1.0f);
    return net;
}

nn::Tensor to_signed(const nn::Tensor& unit) {
    nn::Tensor out = unit;
    for (float& v : out.values()) v = 2.0f * v - 1.0f;
    return out;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

// ---------------------------------------------------------------- config

void ClassifierConfig::validate() const {
    require(epochs >= 1, "classifier: epochs must be >= 1");
    require(learning_rate > 0, "classifier: learning rate must be positive");
    require(momentum >= 0 && momentum < 1, "classifier: momentum must be in [0,1)");
    require(batch_size >= 1, "classifier: batch size must be >= 1");
    require(holdout_fraction >= 0 && holdout_fraction < 0.5, "classifier: holdout fraction must be in [0,0.5)");
}

json ClassifierConfig::to_json() const {
    json j{{"epochs", epochs},
           {"learning_rate", learning_rate},
           {"momentum", momentum},
           {"batch_size", batch_size},
           {"holdout_fraction", holdout_fraction},
           {"seed", seed}};
    j["pretrained_weights"] = pretrained_weights ? json(pretrained_weights->string()) : json(nullptr);
    return j;
}

json ClassifierManifest::to_json() const {
    return json{{"image_size", image_size},
                {"channels", channels},
                {"feature_dim", feature_dim},
                {"n_pos_target", n_pos_target},
                {"n_pos_sub", n_pos_sub},
                {"n_neg", n_neg},
                {"seeds", seeds},
                {"source_model_ids", source_model_ids},
                {"epochs", epochs},
                {"optimizer", optimizer},
                {"holdout_count", holdout_count},
                {"holdout_accuracy", holdout_accuracy},
                {"weights_hash", weights_hash}};
}

ClassifierManifest ClassifierManifest::from_json(const json& j) {
    ClassifierManifest m;
    m.image_size = j.at("image_size").get<int>();
    m.channels = j.at("channels").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.n_pos_target = j.at("n_pos_target").get<int>();
    m.n_pos_sub = j.at("n_pos_sub").get<int>();
    m.n_neg = j.at("n_neg").get<int>();
    m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.source_model_ids = j.at("source_model_ids").get<std::vector<std::string>>();
    m.epochs = j.at("epochs").get<int>();
    m.optimizer = j.at("optimizer");
    m.holdout_count = j.at("holdout_count").get<int>();
    m.holdout_accuracy = j.at("holdout_accuracy").get<double>();
    m.weights_hash = j.at("weights_hash").get<std::string>();
    return m;
}

// ---------------------------------------------------------------- classifier

ProtectionClassifier::ProtectionClassifier(int image_size, int channels, std::uint64_t init_seed) {
    require(channels == 1 || channels == 3, "classifier: channels must be 1 or 3");
    std::mt19937_64 rng(init_seed);
    network_ = build_detector(image_size, channels, rng);
    manifest_.image_size = image_size;
    manifest_.channels = channels;
    manifest_.feature_dim = kFeatureDim;
    manifest_.weights_hash = zoo::weight_blob_hash(network_.weights());
}

std::string ProtectionClassifier::manifest_hash() const { return sha256_hex(manifest_.to_json().dump()); }

void ProtectionClassifier::check_input(const data::ImageBatch& samples) const {
    require(samples.count() >= 1, "classifier: empty sample batch");
    require(samples.size() == image_size() && samples.channels() == channels(),
            "classifier expects " + std::to_string(image_size()) + "x" + std::to_string(image_size()) + "x" +
                std::to_string(channels()) + " inputs, got " + std::to_string(samples.size()) + "x" +
                std::to_string(samples.size()) + "x" + std::to_string(samples.channels()));
}

std::vector<float> ProtectionClassifier::logits(const data::ImageBatch& samples) const {
    check_input(samples);
    constexpr int kChunk = 256;
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(samples.count()));
    for (int first = 0; first < samples.count(); first += kChunk) {
        const int count = std::min(kChunk, samples.count() - first);
        const nn::Tensor y = network_.infer(to_signed(samples.pixels().slice(first, count)));
        out.insert(out.end(), y.data(), y.data() + y.size());
    }
    return out;
}

FeatureMatrix ProtectionClassifier::penultimate_features(const data::ImageBatch& samples) const {
    check_input(samples);
    constexpr int kChunk = 256;
    FeatureMatrix features(samples.count(), feature_dim());
    for (int first = 0; first < samples.count(); first += kChunk) {
        const int count = std::min(kChunk, samples.count() - first);
        const nn::Tensor f = network_.infer(to_signed(samples.pixels().slice(first, count)), network_.depth() - 1);
        for (std::size_t i = 0; i < f.size(); ++i)
            features.values[static_cast<std::size_t>(first) * feature_dim() + i] = f.data()[i];
    }
    return features;
}

FeatureMatrix penultimate_features(const ProtectionClassifier& clf, const data::ImageBatch& samples) {
    return clf.penultimate_features(samples);
}

// ---------------------------------------------------------------- training

void check_training_set(const TrainingSet& set) {
    const int n = set.target_samples.count();
    require(n >= 1, "training set: no target samples");
    require(set.substitute_samples.count() == n, "training set: substitute class must have n samples");
    require(set.independent_samples.count() == 2 * n, "training set: independent class must have 2n samples");
    require(starts_with(set.target_samples.provenance(), "target/"), "training set: target samples mislabelled");
    require(starts_with(set.substitute_samples.provenance(), "substitute/"),
            "training set: substitute samples mislabelled");
    require(starts_with(set.independent_samples.provenance(), "independent/"),
            "training set: independent samples mislabelled");
    const auto& ref = set.target_samples;
    for (const data::ImageBatch* b : {&set.substitute_samples, &set.independent_samples})
        require(b->size() == ref.size() && b->channels() == ref.channels(), "training set: geometry mismatch");
}

ProtectionClassifier train_classifier(const TrainingSet& set, const ClassifierConfig& config,
                                      const std::vector<std::string>& source_model_ids) {
    config.validate();
    check_training_set(set);

    const data::ImageBatch* parts[] = {&set.target_samples, &set.substitute_samples, &set.independent_samples};
    const data::ImageBatch all = data::concat(parts);
    const int n = set.target_samples.count();
    const int total = all.count();
    std::vector<float> labels(static_cast<std::size_t>(total), 0.0f);
    std::fill(labels.begin(), labels.begin() + 2 * n, 1.0f);

    std::mt19937_64 rng(mix64(config.seed ^ 0xc1a55ULL));
    std::vector<int> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int holdout = static_cast<int>(static_cast<double>(total) * config.holdout_fraction);
    std::vector<int> train_idx(order.begin(), order.end() - holdout);
    const std::vector<int> hold_idx(order.end() - holdout, order.end());

    ProtectionClassifier clf(all.size(), all.channels(), mix64(config.seed ^ 0x1a1dULL));
    nn::Sequential& net = clf.network();
    if (config.pretrained_weights) net.set_weights(zoo::read_weight_blob(*config.pretrained_weights, {}));
    nn::Sgd opt(config.learning_rate, config.momentum);
    auto params = net.params();

    std::vector<int> batch;
    std::vector<float> batch_labels;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        for (std::size_t first = 0; first < train_idx.size(); first += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t last = std::min(train_idx.size(), first + static_cast<std::size_t>(config.batch_size));
            batch.assign(train_idx.begin() + static_cast<std::ptrdiff_t>(first),
                         train_idx.begin() + static_cast<std::ptrdiff_t>(last));
            batch_labels.clear();
            for (int i : batch) batch_labels.push_back(labels[static_cast<std::size_t>(i)]);
            net.zero_grad();
            const nn::Tensor logits = net.forward(to_signed(all.select(batch).pixels()));
            nn::Tensor grad;
            const double loss = nn::bce_with_logits(logits, batch_labels, grad);
            if (!std::isfinite(loss)) throw NumericalError("classifier training diverged (non-finite loss)");
            net.backward(grad);
            opt.step(params);
        }
    }

    ClassifierManifest& m = clf.manifest();
    m.n_pos_target = n;
    m.n_pos_sub = n;
    m.n_neg = 2 * n;
    m.seeds["classifier"] = config.seed;
    m.source_model_ids = source_model_ids;
    m.epochs = config.epochs;
    m.optimizer = {{"kind", "sgd"},
                   {"learning_rate", config.learning_rate},
                   {"momentum", config.momentum},
                   {"batch_size", config.batch_size}};
    m.holdout_count = holdout;
    if (holdout > 0) {
        const auto scores = clf.logits(all.select(hold_idx));
        int correct = 0;
        for (std::size_t i = 0; i < hold_idx.size(); ++i)
            correct += ((scores[i] > 0.0f) == (labels[static_cast<std::size_t>(hold_idx[i])] > 0.5f)) ? 1 : 0;
        m.holdout_accuracy = static_cast<double>(correct) / holdout;
    }
    m.weights_hash = zoo::weight_blob_hash(net.weights());
    return clf;
}

namespace {

data::ImageBatch role_samples(const zoo::GeneratorModel& model, int count, std::uint64_t seed,
                              const std::string& role) {
    data::ImageBatch raw = zoo::sample(model, data::sample_prior(count, model.latent_dim(), seed));
    return data::ImageBatch(std::move(raw.mutable_pixels()), role + "/" + raw.provenance());
}

}  // namespace

ProtectionClassifier train_from_generators(const zoo::GeneratorModel& target, const zoo::GeneratorModel& substitute,
                                           const zoo::GeneratorModel& independent, const ProtectionConfig& config) {
    const int n = config.budgets.per_class;
    require(n >= 1, "build_protection: per-class budget must be >= 1");
    const std::uint64_t s = config.sample_seed;
    TrainingSet set{role_samples(target, n, mix64(s ^ 1), "target"),
                    role_samples(substitute, n, mix64(s ^ 2), "substitute"),
                    role_samples(independent, 2 * n, mix64(s ^ 3), "independent")};
    ProtectionClassifier clf = train_classifier(
        set, config.classifier, {target.lineage().id, substitute.lineage().id, independent.lineage().id});
    auto& seeds = clf.manifest().seeds;
    seeds["samples"] = s;
    seeds["extraction_queries"] = config.extraction_query_seed;
    seeds["extraction_training"] = config.extraction_training.seed;
    seeds["independent_training"] = config.independent_training.seed;
    return clf;
}

ProtectionBuild build_protection(const zoo::GeneratorModel& target, const data::ImageBatch& independent_data,
                                 const ProtectionConfig& config, const data::ImageBatch* target_training_data) {
    require(target.trained_steps() > 0, "build_protection: target is untrained");
    require(config.budgets.query_budget >= 1 && config.budgets.per_class >= 1, "build_protection: budgets must be >= 1");
    require(independent_data.provenance() != target.lineage().train_data_ref,
            "build_protection: independent data is the target's training data");
    if (target_training_data) {
        std::set<std::string> seen;
        for (int i = 0; i < target_training_data->count(); ++i) seen.insert(target_training_data->image_hash(i));
        for (int i = 0; i < independent_data.count(); ++i)
            require(!seen.contains(independent_data.image_hash(i)),
                    "build_protection: independent data overlaps the target's training data");
    }

    auto stage = [](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const zoo::DivergenceError& e) {
            throw zoo::DivergenceError(std::string("build_protection/") + name + ": " + e.what(), e.last_good());
        }
    };

    zoo::GeneratorModel substitute = stage("extract", [&] {
        return extraction::extract_model(target, config.budgets.query_budget, target.arch(),
                                         config.extraction_training, config.extraction_query_seed)
            .substitute;
    });
    zoo::GeneratorModel independent = stage("independent", [&] {
        return zoo::train_gan(independent_data, target.arch(), target.latent_dim(), config.independent_training).model;
    });
    independent.lineage().role = zoo::Role::independent;
    ProtectionClassifier clf = train_from_generators(target, substitute, independent, config);
    return ProtectionBuild{std::move(clf), std::move(substitute), std::move(independent)};
}

// ---------------------------------------------------------------- verification

std::vector<std::uint8_t> predict_batch(const ProtectionClassifier& clf, const data::ImageBatch& samples) {
    const auto scores = clf.logits(samples);
    std::vector<std::uint8_t> bits(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) bits[i] = scores[i] > 0.0f ? 1 : 0;
    return bits;
}

double confidence_score(std::span<const std::uint8_t> predictions) {
    require(!predictions.empty(), "confidence_score: empty prediction vector");
    std::size_t ones = 0;
    for (std::uint8_t b : predictions) {
        require(b <= 1, "confidence_score: predictions must be 0 or 1");
        ones += b;
    }
    return static_cast<double>(ones) / static_cast<double>(predictions.size());
}

int ownership_decision(double confidence, double tau) { return confidence > tau ? 1 : 0; }

VerificationReport perform_verification(const ProtectionClassifier& clf, const data::ImageBatch& suspect_samples,
                                        double tau, int m, const std::string& suspect_ref) {
    require(tau > 0.0 && tau < 1.0, "perform_verification: tau must be in (0,1)");
    require(m >= 1, "perform_verification: m must be >= 1");
    require(suspect_samples.count() >= m, "perform_verification: " + std::to_string(suspect_samples.count()) +
                                              " suspect samples supplied, " + std::to_string(m) + " required");
    VerificationReport r;
    r.suspect_ref = suspect_ref.empty() ? suspect_samples.provenance() : suspect_ref;
    r.m = m;
    r.predictions = predict_batch(clf, suspect_samples.slice(0, m));
    r.positives = static_cast<int>(std::count(r.predictions.begin(), r.predictions.end(), std::uint8_t{1}));
    r.confidence_score = confidence_score(r.predictions);
    r.tau = tau;
    r.decision = ownership_decision(r.confidence_score, tau);
    r.classifier_manifest_hash = clf.manifest_hash();
    r.timestamp = utc_timestamp();
    return r;
}

json VerificationReport::to_json(bool include_timestamp) const {
    std::string bits(predictions.size(), '0');
    for (std::size_t i = 0; i < predictions.size(); ++i) bits[i] = predictions[i] ? '1' : '0';
    json j{{"suspect_ref", suspect_ref},
           {"m", m},
           {"predictions", bits},
           {"positives", positives},
           {"confidence_score", confidence_score},
           {"tau", tau},
           {"decision", decision},
           {"decision_label", decision ? "stolen" : "honest"},
           {"classifier_manifest_hash", classifier_manifest_hash}};
    if (include_timestamp) j["timestamp"] = timestamp;
    return j;
}

VerificationReport VerificationReport::from_json(const json& j) {
    VerificationReport r;
    r.suspect_ref = j.at("suspect_ref").get<std::string>();
    r.m = j.at("m").get<int>();
    const auto bits = j.at("predictions").get<std::string>();
    for (char c : bits) r.predictions.push_back(c == '1' ? 1 : 0);
    r.positives = j.at("positives").get<int>();
    r.confidence_score = j.at("confidence_score").get<double>();
    r.tau = j.at("tau").get<double>();
    r.decision = j.at("decision").get<int>();
    r.classifier_manifest_hash = j.at("classifier_manifest_hash").get<std::string>();
    r.timestamp = j.value("timestamp", "");
    return r;
}

// ---------------------------------------------------------------- persistence

void save_classifier(const ProtectionClassifier& clf, const fs::path& dir) {
    fs::create_directories(dir);
    zoo::write_weight_blob(dir / "weights.bin", clf.network().weights());
    json manifest = clf.manifest().to_json();
    manifest["format"] = "ganguards-classifier-v1";
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

ProtectionClassifier load_classifier(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    require(static_cast<bool>(in), "no classifier manifest in " + dir.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw CorruptionError("unreadable classifier manifest in " + dir.string() + ": " + e.what());
    }
    ClassifierManifest m = ClassifierManifest::from_json(j);
    ProtectionClassifier clf(m.image_size, m.channels, 0);
    const auto weights = zoo::read_weight_blob(dir / "weights.bin", m.weights_hash);
    if (weights.size() != clf.network().parameter_count())
        throw CorruptionError("classifier weights do not fit the detector architecture");
    clf.network().set_weights(weights);
    clf.manifest() = std::move(m);
    return clf;
}

void save_report(const VerificationReport& report, const fs::path& file) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream(file) << report.to_json().dump(2) << '\n';
}

VerificationReport load_report(const fs::path& file) {
    std::ifstream in(file);
    require(static_cast<bool>(in), "cannot open report " + file.string());
    return VerificationReport::from_json(json::parse(in));
}

}  // namespace ganguards::protection
