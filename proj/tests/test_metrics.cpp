#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "ganguards/error.hpp"
#include "ganguards/metrics.hpp"
#include "ganguards/obfuscation.hpp"

using namespace ganguards;

namespace {

FeatureMatrix gaussian_features(int rows, int cols, double shift, std::uint64_t seed) {
    FeatureMatrix f(rows, cols);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0, 1);
    for (double& v : f.values) v = d(rng) + shift;
    return f;
}

const metrics::FamilyFeatureExtractor& small_extractor() {
    static const auto e = [] {
        metrics::FamilyFeatureExtractor::Options o;
        o.image_size = 16;
        o.images_per_family = 120;
        o.epochs = 4;
        return metrics::FamilyFeatureExtractor::train(o);
    }();
    return e;
}

data::ImageBatch constant(float v, int size = 16) { return {nn::Tensor(1, 3, size, size, v), "const"}; }

}  // namespace

TEST_CASE("fid closed forms") {
    FeatureMatrix a(4, 1), b(4, 1);
    const double xs[] = {-1.5, -0.5, 0.5, 1.5};
    for (int i = 0; i < 4; ++i) {
        a.at(i, 0) = xs[i];
        b.at(i, 0) = xs[i] + 3.0;
    }
    CHECK(std::abs(metrics::frechet_distance(a, b) - 9.0) <= 1e-9);

    // Diagonal moments: |mu_a - mu_b|^2 + sum (sa - sb)^2 for variances sa^2, sb^2.
    const std::vector<double> mu_a{0, 1}, mu_b{2, 1}, cov_a{4, 0, 0, 9}, cov_b{1, 0, 0, 9};
    CHECK(metrics::frechet_distance(mu_a, cov_a, mu_b, cov_b, 2) == doctest::Approx(4.0 + 1.0).epsilon(1e-12));
}

TEST_CASE("fid identity, symmetry and validation") {
    const auto x = gaussian_features(300, 8, 0.0, 1);
    const auto y = gaussian_features(300, 8, 0.4, 2);
    CHECK(std::abs(metrics::frechet_distance(x, x)) <= 1e-6);
    CHECK(std::abs(metrics::frechet_distance(x, y) - metrics::frechet_distance(y, x)) <= 1e-6);
    CHECK(metrics::frechet_distance(x, y) > 0.8);
    CHECK_THROWS_AS(metrics::frechet_distance(x, gaussian_features(30, 7, 0, 3)), PreconditionError);
    CHECK_THROWS_AS(metrics::frechet_distance(x, FeatureMatrix(1, 8)), PreconditionError);
    const auto r = metrics::fid_from_features(x, y, "id");
    CHECK(r.low_sample_warning);
    CHECK(r.feature_extractor_id == "id");
    CHECK(!metrics::fid_from_features(gaussian_features(500, 2, 0, 1), gaussian_features(500, 2, 0, 2), "id")
               .low_sample_warning);
}

TEST_CASE("fid on learned features grows with added noise") {
    const auto& ex = small_extractor();
    CHECK(ex.train_accuracy() > 0.8);
    const auto images = fixtures::shapes(300, 77);
    CHECK(metrics::fid(images, images, ex).value <= 1e-6);
    double last = -1;
    for (double sigma : {0.0, 0.01, 0.05, 0.1}) {
        const auto noisy = obfuscation::output_perturb(images, obfuscation::OutputKind::a, sigma, 3);
        const double v = metrics::fid(images, noisy, ex).value;
        CHECK(v >= last);
        last = v;
        CHECK(std::abs(v - metrics::fid(noisy, images, ex).value) <= 1e-6);
    }
    CHECK(ex.id().rfind("family-cnn-", 0) == 0);
}

TEST_CASE("feature extractor persistence") {
    const auto dir = fixtures::scratch_dir("extractor");
    small_extractor().save(dir / "e");
    const auto back = metrics::FamilyFeatureExtractor::load(dir / "e");
    CHECK(back.id() == small_extractor().id());
    const auto img = fixtures::shapes(3, 1);
    CHECK(back.features(img).values == small_extractor().features(img).values);
}

TEST_CASE("ssim identity and symmetry over a fuzz set") {
    const auto a = fixtures::random_images(100, 16, 3, 5);
    const auto b = fixtures::random_images(100, 16, 3, 6);
    for (int i = 0; i < 100; ++i) {
        CHECK(metrics::ssim(a, i, a, i) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::abs(metrics::ssim(a, i, b, i) - metrics::ssim(b, i, a, i)) <= 1e-12);
        CHECK(metrics::ssim(a, i, b, i) < 0.5);
    }
}

TEST_CASE("ssim of constant images has a closed form") {
    const double c1 = 0.01 * 0.01;
    for (auto [p, q] : {std::pair{0.2f, 0.6f}, std::pair{0.0f, 1.0f}, std::pair{0.5f, 0.5f}}) {
        const double expected = (2.0 * p * q + c1) / (static_cast<double>(p) * p + static_cast<double>(q) * q + c1);
        CHECK(std::abs(metrics::ssim(constant(p), 0, constant(q), 0) - expected) <= 1e-9);
    }
    // (2*0.2*0.6 + 1e-4) / (0.04 + 0.36 + 1e-4)
    CHECK(metrics::ssim(constant(0.2f), 0, constant(0.6f), 0) == doctest::Approx(0.60009997500624844).epsilon(1e-7));
    CHECK_THROWS_AS(metrics::ssim(constant(0.1f, 4), 0, constant(0.1f, 4), 0), PreconditionError);
}

TEST_CASE("adaptive strategies degrade quality monotonically") {
    const auto img = fixtures::shapes(30, 12);
    double last = 1.0;
    for (auto s : {obfuscation::Strategy::I, obfuscation::Strategy::II, obfuscation::Strategy::III}) {
        const double v = metrics::mean_ssim(img, obfuscation::adaptive_attack_II(img, s, 1));
        CHECK(v < last);
        last = v;
    }
}

TEST_CASE("suspect zoo accuracy") {
    std::vector<protection::VerificationReport> reports(3);
    reports[0].decision = 1;
    reports[0].confidence_score = 0.95;
    reports[1].decision = 0;
    reports[2].decision = 1;
    const auto z = metrics::suspect_zoo_report(reports, {1, 0, 0}, {"PS", "Ind-a", "Ind-b"});
    CHECK(z.accuracy == doctest::Approx(2.0 / 3.0));
    CHECK(!z.entries[2].correct);
    CHECK(z.entries[0].suspect == "PS");
    CHECK_THROWS_AS(metrics::suspect_zoo_report(reports, {1, 0}), PreconditionError);
}
