#include <doctest.h>

#include <bit>
#include <random>

#include "fixtures.hpp"
#include "ganguards/error.hpp"
#include "ganguards/protection.hpp"

using namespace ganguards;

namespace {

data::ImageBatch shade(int count, float lo, float hi, std::uint64_t seed, const std::string& provenance) {
    nn::Tensor t(count, 3, 16, 16);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(lo, hi);
    for (float& v : t.values()) v = u(rng);
    return {std::move(t), provenance};
}

protection::TrainingSet toy_set(int n) {
    return {shade(n, 0.6f, 1.0f, 1, "target/gen:t"), shade(n, 0.6f, 1.0f, 2, "substitute/gen:s"),
            shade(2 * n, 0.0f, 0.4f, 3, "independent/gen:i")};
}

protection::ClassifierConfig quick() {
    protection::ClassifierConfig c;
    c.epochs = 2;
    c.seed = 11;
    return c;
}

const protection::ProtectionClassifier& toy_classifier() {
    static const auto clf = protection::train_classifier(toy_set(64), quick(), {"t", "s", "i"});
    return clf;
}

}  // namespace

TEST_CASE("confidence and decision agree with a popcount oracle") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int len = 1 + static_cast<int>(rng() % 64);
        const std::uint64_t word = rng() & (len == 64 ? ~0ULL : ((1ULL << len) - 1));
        std::vector<std::uint8_t> bits(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) bits[static_cast<std::size_t>(i)] = (word >> i) & 1U;
        const double oracle = static_cast<double>(std::popcount(word)) / len;
        const double tau = static_cast<double>(rng() % 1000) / 1000.0 + 0.0005;
        CHECK(protection::confidence_score(bits) == oracle);
        CHECK(protection::ownership_decision(oracle, tau) == (std::popcount(word) > tau * len ? 1 : 0));
    }
    CHECK(protection::ownership_decision(0.9, 0.9) == 0);
    CHECK(protection::ownership_decision(std::nextafter(0.9, 1.0), 0.9) == 1);
    CHECK_THROWS_AS(protection::confidence_score({}), PreconditionError);
    const std::vector<std::uint8_t> bad{0, 2};
    CHECK_THROWS_AS(protection::confidence_score(bad), PreconditionError);
}

TEST_CASE("training set must be balanced and role tagged") {
    CHECK_NOTHROW(protection::check_training_set(toy_set(4)));
    auto unbalanced = toy_set(4);
    unbalanced.independent_samples = unbalanced.independent_samples.slice(0, 6);
    CHECK_THROWS_AS(protection::check_training_set(unbalanced), PreconditionError);
    auto mislabelled = toy_set(4);
    mislabelled.substitute_samples = shade(4, 0.6f, 1.0f, 2, "independent/gen:x");
    CHECK_THROWS_AS(protection::check_training_set(mislabelled), PreconditionError);
    auto geometry = toy_set(4);
    geometry.target_samples = fixtures::random_images(4, 32, 3, 1).tagged("target");
    CHECK_THROWS_AS(protection::check_training_set(geometry), PreconditionError);
}

TEST_CASE("classifier learns a separable toy problem and decides by threshold") {
    const auto& clf = toy_classifier();
    CHECK(clf.manifest().holdout_accuracy > 0.9);
    CHECK(clf.manifest().n_pos_target == 64);
    CHECK(clf.manifest().n_neg == 128);
    const auto stolen = protection::perform_verification(clf, shade(200, 0.6f, 1.0f, 7, "s"), 0.9, 100, "bright");
    const auto honest = protection::perform_verification(clf, shade(200, 0.0f, 0.4f, 8, "s"), 0.9, 100, "dark");
    CHECK(stolen.m == 100);
    CHECK(stolen.predictions.size() == 100);
    CHECK(stolen.decision == 1);
    CHECK(honest.decision == 0);
    CHECK(stolen.classifier_manifest_hash == clf.manifest_hash());
    CHECK_THROWS_AS(protection::perform_verification(clf, shade(50, 0, 1, 1, "s"), 0.9, 100), PreconditionError);
    CHECK_THROWS_AS(protection::perform_verification(clf, shade(200, 0, 1, 1, "s"), 1.0, 100), PreconditionError);
    CHECK_THROWS_AS(protection::perform_verification(clf, fixtures::random_images(200, 32, 3, 1), 0.9, 100),
                    PreconditionError);
}

TEST_CASE("verification uses only the first m samples") {
    const auto& clf = toy_classifier();
    const auto bright = shade(100, 0.6f, 1.0f, 7, "s");
    const auto dark = shade(100, 0.0f, 0.4f, 8, "s");
    const data::ImageBatch* parts[] = {&bright, &dark};
    const auto mixed = data::concat(parts);
    CHECK(protection::perform_verification(clf, mixed, 0.9, 100).decision == 1);
}

TEST_CASE("classifier training is deterministic") {
    const auto again = protection::train_classifier(toy_set(64), quick(), {"t", "s", "i"});
    CHECK(again.manifest_hash() == toy_classifier().manifest_hash());
}

TEST_CASE("classifier and report persistence") {
    const auto dir = fixtures::scratch_dir("protection-io");
    const auto& clf = toy_classifier();
    protection::save_classifier(clf, dir / "clf");
    const auto back = protection::load_classifier(dir / "clf");
    CHECK(back.manifest_hash() == clf.manifest_hash());
    const auto x = shade(10, 0, 1, 3, "s");
    CHECK(back.logits(x) == clf.logits(x));
    CHECK(back.penultimate_features(x).cols == clf.feature_dim());

    const auto report = protection::perform_verification(clf, shade(40, 0.6f, 1.0f, 7, "s"), 0.9, 40, "ref");
    protection::save_report(report, dir / "r.json");
    const auto loaded = protection::load_report(dir / "r.json");
    CHECK(loaded.predictions == report.predictions);
    CHECK(loaded.to_json(false) == report.to_json(false));
    CHECK(!report.to_json(false).contains("timestamp"));
    CHECK_THROWS(protection::load_classifier(dir / "nothing"));
}
