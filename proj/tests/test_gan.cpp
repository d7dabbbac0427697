#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "ganguards/error.hpp"
#include "ganguards/gan.hpp"

using namespace ganguards;

TEST_CASE("every architecture samples images in range at the requested geometry") {
    for (auto arch : {zoo::ArchId::gan_a, zoo::ArchId::gan_b, zoo::ArchId::gan_c}) {
        zoo::GeneratorModel g(arch, 16, 16, 3, 1);
        const auto out = zoo::sample(g, data::sample_prior(5, 16, 2));
        CHECK(out.count() == 5);
        CHECK(out.size() == 16);
        CHECK(out.channels() == 3);
        for (float v : out.pixels().values()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(zoo::parse_arch(zoo::to_string(arch)) == arch);
    }
    CHECK_THROWS_AS(zoo::parse_arch("gan-z"), PreconditionError);
    CHECK_THROWS_AS(zoo::GeneratorModel(zoo::ArchId::gan_a, 16, 12, 3, 1), PreconditionError);
}

TEST_CASE("training is deterministic per seed and records snapshots") {
    const auto images = fixtures::shapes(24, 3);
    const auto a = zoo::train_gan(images, zoo::ArchId::gan_a, 16, fixtures::tiny_training(5));
    const auto b = zoo::train_gan(images, zoo::ArchId::gan_a, 16, fixtures::tiny_training(5));
    const auto c = zoo::train_gan(images, zoo::ArchId::gan_a, 16, fixtures::tiny_training(6));
    CHECK(a.model.weights_hash() == b.model.weights_hash());
    CHECK(a.model.weights_hash() != c.model.weights_hash());
    CHECK(a.model.lineage().id == b.model.lineage().id);
    CHECK(a.model.trained_steps() == 8);
    REQUIRE(a.snapshots.size() == 3);
    CHECK(a.snapshots[0].step == 0);
    CHECK(a.snapshots[2].step == 8);
    CHECK(a.snapshots[2].model.weights_hash() == a.model.weights_hash());
    CHECK(a.model.lineage().role == zoo::Role::target);
    CHECK(a.model.lineage().generation_index == 0);
}

TEST_CASE("training config validation") {
    auto c = fixtures::tiny_training(1);
    CHECK_NOTHROW(c.validate());
    c.batch_size = 6;
    CHECK_THROWS_AS(c.validate(), PreconditionError);
    c = fixtures::tiny_training(1);
    c.snapshot_every = 3;
    CHECK_THROWS_AS(c.validate(), PreconditionError);
    c = fixtures::tiny_training(1);
    c.ema_decay = 1.0f;
    CHECK_THROWS_AS(c.validate(), PreconditionError);
    auto d = fixtures::tiny_training(1);
    d.lr_generator = 2e-3f;
    CHECK(d.hash() != fixtures::tiny_training(1).hash());
    const auto images = fixtures::shapes(12, 1);
    CHECK_THROWS_AS(zoo::train_gan(images, zoo::ArchId::gan_a, 16, c), PreconditionError);
}

TEST_CASE("model persistence round trips and detects corruption") {
    const auto dir = fixtures::scratch_dir("gan-io");
    const auto images = fixtures::shapes(24, 3);
    const auto model = zoo::train_gan(images, zoo::ArchId::gan_b, 16, fixtures::tiny_training(2)).model;
    zoo::save_model(model, dir / "m");
    const auto back = zoo::load_model(dir / "m");
    CHECK(back.weights_hash() == model.weights_hash());
    CHECK(back.lineage().id == model.lineage().id);
    const auto lat = data::sample_prior(3, 16, 9);
    CHECK(zoo::sample(back, lat).content_hash() == zoo::sample(model, lat).content_hash());
    CHECK(zoo::inspect_model(dir / "m").arch_id == "gan-b");

    {
        std::fstream f(dir / "m" / "weights.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        const char junk[4] = {1, 2, 3, 4};
        f.write(junk, 4);
    }
    CHECK_THROWS_AS(zoo::load_model(dir / "m"), CorruptionError);
    std::filesystem::resize_file(dir / "m" / "weights.bin", 10);
    CHECK_THROWS_AS(zoo::load_model(dir / "m"), CorruptionError);
    CHECK_THROWS(zoo::load_model(dir / "absent"));
}

TEST_CASE("lineage validation") {
    zoo::Lineage root;
    root.id = "a";
    CHECK_NOTHROW(zoo::validate_lineage(root));
    zoo::Lineage child = root;
    child.id = "b";
    child.generation_index = 1;
    child.parent_id = "a";
    child.ancestry = {"a"};
    CHECK_NOTHROW(zoo::validate_lineage(child));
    auto orphan = child;
    orphan.parent_id.reset();
    CHECK_THROWS_AS(zoo::validate_lineage(orphan), PreconditionError);
    auto cyclic = child;
    cyclic.ancestry = {"a", "a"};
    CHECK_THROWS_AS(zoo::validate_lineage(cyclic), PreconditionError);
    CHECK(zoo::lineage_from_json(zoo::to_json(child)).ancestry == child.ancestry);
}

TEST_CASE("divergence surfaces with the last finite snapshot") {
    const auto images = fixtures::shapes(24, 3);
    auto c = fixtures::tiny_training(3);
    c.lr_generator = c.lr_discriminator = 1e30f;
    try {
        zoo::train_gan(images, zoo::ArchId::gan_a, 16, c);
        // A run can survive even absurd rates; the weights must then be finite.
    } catch (const zoo::DivergenceError& e) {
        for (float w : e.last_good().model.network().weights()) CHECK(std::isfinite(w));
    }
}
