#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "ganguards/error.hpp"
#include "ganguards/obfuscation.hpp"

using namespace ganguards;
using obfuscation::OutputKind;

namespace {

int mirror(int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

// Direct 2-D Gaussian convolution. `renormalize` divides by the kernel mass
// that falls inside the image instead of mirroring at the border.
double oracle_pixel(const data::ImageBatch& img, int n, int c, int y, int x, double sigma, bool renormalize) {
    const int r = static_cast<int>(std::ceil(3 * sigma));
    const int s = img.size();
    double acc = 0, mass = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double k = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            int yy = y + dy, xx = x + dx;
            if (renormalize && (yy < 0 || yy >= s || xx < 0 || xx >= s)) continue;
            yy = mirror(yy, s);
            xx = mirror(xx, s);
            acc += k * img.pixels().at(n, c, yy, xx);
            mass += k;
        }
    if (!renormalize) {
        double full = 0;
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) full += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        return acc / full;
    }
    return acc / mass;
}

double max_abs_diff(const data::ImageBatch& a, const data::ImageBatch& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i)
        worst = std::max(worst, static_cast<double>(std::abs(a.pixels().data()[i] - b.pixels().data()[i])));
    return worst;
}

}  // namespace

TEST_CASE("gaussian blur matches an explicit convolution oracle") {
    const auto img = fixtures::random_images(2, 12, 3, 4);
    for (double sigma : {0.5, 1.0, 1.7}) {
        for (auto kind : {OutputKind::b, OutputKind::c}) {
            const auto out = obfuscation::output_perturb(img, kind, sigma);
            double worst = 0;
            for (int n = 0; n < 2; ++n)
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < 12; ++y)
                        for (int x = 0; x < 12; ++x) {
                            const double ref = std::clamp(oracle_pixel(img, n, c, y, x, sigma, kind == OutputKind::b), 0.0, 1.0);
                            worst = std::max(worst, std::abs(out.pixels().at(n, c, y, x) - ref));
                        }
            CHECK(worst <= 1e-6);
        }
    }
}

TEST_CASE("gaussian taps are normalized with radius ceil(3 sigma)") {
    CHECK(obfuscation::gaussian_taps(0.0) == std::vector<double>{1.0});
    const auto t = obfuscation::gaussian_taps(1.0);
    REQUIRE(t.size() == 7);
    // exp(-k^2/2) / sum over k in [-3,3]
    CHECK(t[3] == doctest::Approx(0.39905027965).epsilon(1e-9));
    CHECK(t[0] == doctest::Approx(0.00443304937).epsilon(1e-8));
    CHECK(obfuscation::gaussian_taps(0.4).size() == 5);
}

TEST_CASE("identity settings stay within one 8-bit step") {
    const auto img = fixtures::shapes(6, 9);
    CHECK(max_abs_diff(img, obfuscation::output_perturb(img, OutputKind::a, 0.0)) == 0.0);
    CHECK(max_abs_diff(img, obfuscation::output_perturb(img, OutputKind::b, 0.0)) == 0.0);
    CHECK(max_abs_diff(img, obfuscation::output_perturb(img, OutputKind::c, 0.0)) == 0.0);
    CHECK(max_abs_diff(img, obfuscation::output_perturb(img, OutputKind::d, 1.0)) <= 1.0 / 255.0 + 1e-7);
}

TEST_CASE("jpeg goes through a baseline bitstream and quality matters") {
    const auto img = fixtures::shapes(3, 2);
    const auto bytes = obfuscation::encode_jpeg(img, 0, 85);
    REQUIRE(bytes.size() > 4);
    CHECK(bytes[0] == 0xFF);
    CHECK(bytes[1] == 0xD8);
    CHECK(bytes[bytes.size() - 2] == 0xFF);
    CHECK(bytes[bytes.size() - 1] == 0xD9);
    bool baseline = false;
    for (std::size_t i = 0; i + 1 < bytes.size(); ++i) baseline |= bytes[i] == 0xFF && bytes[i + 1] == 0xC0;
    CHECK(baseline);
    CHECK(obfuscation::encode_jpeg(img, 0, 30).size() < obfuscation::encode_jpeg(img, 0, 95).size());
    const double coarse = max_abs_diff(img, obfuscation::output_perturb(img, OutputKind::d, 0.1));
    const double fine = max_abs_diff(img, obfuscation::output_perturb(img, OutputKind::d, 0.95));
    CHECK(coarse > fine);
}

TEST_CASE("output perturbations are pure, shape preserving, clamped and tagged") {
    const auto img = fixtures::shapes(6, 1);
    const auto a1 = obfuscation::output_perturb(img, OutputKind::a, 0.3, 5);
    const auto a2 = obfuscation::output_perturb(img, OutputKind::a, 0.3, 5);
    const auto a3 = obfuscation::output_perturb(img, OutputKind::a, 0.3, 6);
    CHECK(a1.content_hash() == a2.content_hash());
    CHECK(a1.content_hash() != a3.content_hash());
    CHECK(a1.count() == 6);
    for (float v : a1.pixels().values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(a1.provenance() == data::append_tag(img.provenance(), "Oup-a:0.3"));
    CHECK_THROWS_AS(obfuscation::output_perturb(img, OutputKind::d, 0.0), PreconditionError);
    CHECK_THROWS_AS(obfuscation::output_perturb(img, OutputKind::a, -1.0), PreconditionError);
    CHECK_THROWS_AS(obfuscation::output_perturb(img, OutputKind::c, 100.0), PreconditionError);
}

TEST_CASE("adaptive strategy II applies a, b, c, d in order") {
    const auto img = fixtures::shapes(3, 4);
    const auto mags = obfuscation::strategy_magnitudes(obfuscation::Strategy::II);
    CHECK(mags == std::array<double, 4>{0.005, 0.2, 0.3, 0.90});
    auto manual = obfuscation::output_perturb(img, OutputKind::a, mags[0], 8);
    manual = obfuscation::output_perturb(manual, OutputKind::b, mags[1]);
    manual = obfuscation::output_perturb(manual, OutputKind::c, mags[2]);
    manual = obfuscation::output_perturb(manual, OutputKind::d, mags[3]);
    const auto combined = obfuscation::adaptive_attack_II(img, obfuscation::Strategy::II, 8);
    CHECK(combined.content_hash() == manual.content_hash());
    CHECK(combined.provenance().find("AdaII-II") != std::string::npos);
}

TEST_CASE("attack specs validate and round trip through JSON") {
    using obfuscation::AttackKind;
    obfuscation::AttackSpec jpeg{AttackKind::oup_d_jpeg, {0.85}, obfuscation::Base::ME, std::nullopt};
    CHECK_NOTHROW(jpeg.validate());
    const auto back = obfuscation::AttackSpec::from_json(jpeg.to_json());
    CHECK(back.kind == AttackKind::oup_d_jpeg);
    CHECK(back.base == obfuscation::Base::ME);
    CHECK(back.magnitudes == jpeg.magnitudes);
    obfuscation::AttackSpec ada{AttackKind::adaptive_II, {}, obfuscation::Base::PS, std::nullopt};
    CHECK_THROWS_AS(ada.validate(), PreconditionError);
    obfuscation::AttackSpec bad{AttackKind::oup_d_jpeg, {85.0}, obfuscation::Base::PS, std::nullopt};
    CHECK_THROWS_AS(bad.validate(), PreconditionError);
    CHECK_THROWS_AS(obfuscation::parse_attack_kind("oup_z"), PreconditionError);
    CHECK(!obfuscation::overwrite_attack().applicable);
}

TEST_CASE("fine-tuning records lineage and zero steps keep the weights") {
    const auto split = data::split_three_way(fixtures::shapes(48, 3), 1);
    const auto stolen =
        zoo::train_gan(split.part_I, zoo::ArchId::gan_a, 16, fixtures::tiny_training(1)).model;
    auto cfg = fixtures::tiny_training(2);
    const auto tuned = obfuscation::fine_tune(stolen, split.part_II, cfg, &split.part_I);
    CHECK(tuned.weights_hash() != stolen.weights_hash());
    CHECK(tuned.lineage().derivation == "fine_tune");
    CHECK(tuned.lineage().parent_id == stolen.lineage().id);
    CHECK(tuned.lineage().role == zoo::Role::suspect);
    cfg.steps = 0;
    CHECK(obfuscation::fine_tune(stolen, split.part_II, cfg).weights_hash() == stolen.weights_hash());
    CHECK_THROWS_AS(obfuscation::fine_tune(stolen, split.part_I, fixtures::tiny_training(2), &split.part_I),
                    PreconditionError);
}

TEST_CASE("input perturbation draws fresh latents") {
    const auto model =
        zoo::train_gan(fixtures::shapes(24, 3), zoo::ArchId::gan_a, 16, fixtures::tiny_training(1)).model;
    const auto a = obfuscation::input_perturb(model, 4, 1);
    CHECK(a.count() == 4);
    CHECK(a.provenance().find("Inp") != std::string::npos);
    CHECK(a.content_hash() != obfuscation::input_perturb(model, 4, 2).content_hash());
}
