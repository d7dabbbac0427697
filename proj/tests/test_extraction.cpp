#include <doctest.h>

#include "fixtures.hpp"
#include "ganguards/error.hpp"
#include "ganguards/extraction.hpp"

using namespace ganguards;

namespace {

const zoo::GeneratorModel& victim() {
    static const auto model =
        zoo::train_gan(fixtures::shapes(24, 3), zoo::ArchId::gan_a, 16, fixtures::tiny_training(1)).model;
    return model;
}

}  // namespace

TEST_CASE("extraction trains only on victim samples and records lineage") {
    const auto res = extraction::extract_model(victim(), 16, zoo::ArchId::gan_c, fixtures::tiny_training(2), 7);
    const auto& l = res.substitute.lineage();
    CHECK(res.substitute.arch() == zoo::ArchId::gan_c);
    CHECK(l.parent_id == victim().lineage().id);
    CHECK(l.generation_index == 1);
    CHECK(l.derivation == "extraction");
    CHECK(l.ancestry == std::vector<std::string>{victim().lineage().id});
    CHECK(res.training_provenance.find(victim().lineage().id) != std::string::npos);
    const auto again = extraction::extract_model(victim(), 16, zoo::ArchId::gan_c, fixtures::tiny_training(2), 7);
    CHECK(again.substitute.weights_hash() == res.substitute.weights_hash());
}

TEST_CASE("extraction preconditions") {
    CHECK_THROWS_AS(extraction::extract_model(victim(), 4, zoo::ArchId::gan_a, fixtures::tiny_training(2), 7),
                    PreconditionError);
    zoo::GeneratorModel untrained(zoo::ArchId::gan_a, 16, 16, 3, 1);
    CHECK_THROWS_AS(extraction::extract_model(untrained, 16, zoo::ArchId::gan_a, fixtures::tiny_training(2), 7),
                    PreconditionError);
}

TEST_CASE("extraction chains keep one architecture and an acyclic ancestry") {
    const auto chain = extraction::extraction_chain(victim(), 3, 16, zoo::ArchId::gan_a, fixtures::tiny_training(2), 4);
    REQUIRE(chain.models.size() == 3);
    CHECK(!chain.aborted);
    for (std::size_t g = 0; g < 3; ++g) {
        const auto& l = chain.models[g].lineage();
        CHECK(l.generation_index == static_cast<int>(g) + 1);
        CHECK(l.ancestry.size() == g + 1);
        CHECK(l.ancestry.front() == victim().lineage().id);
        CHECK_NOTHROW(zoo::validate_lineage(l));
        if (g > 0) CHECK(l.parent_id == chain.models[g - 1].lineage().id);
    }
    const auto dir = fixtures::scratch_dir("chain");
    extraction::save_chain(victim(), chain, dir);
    const auto back = extraction::load_chain(dir);
    REQUIRE(back.size() == 3);
    CHECK(back[2].weights_hash() == chain.models[2].weights_hash());
}
