#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "fixtures.hpp"
#include "ganguards/error.hpp"
#include "ganguards/harness.hpp"

using namespace ganguards;
using nlohmann::json;

namespace {

json tiny_config(const std::string& kind) {
    return json{{"kind", kind},
                {"dataset", {{"count", 120}, {"size", 16}}},
                {"latent_dim", 16},
                {"gan", {{"steps", 8}, {"batch_size", 8}, {"snapshot_every", 4}}},
                {"snapshot_every", 4},
                {"budgets", {{"query_budget", 32}, {"per_class", 32}}},
                {"classifier", {{"epochs", 1}}},
                {"m", 20},
                {"trial_seeds", {1, 2}},
                {"finetune_steps", 4},
                {"generations", 2},
                {"m_values", {5, 10}},
                {"subsets", 3},
                {"fid_samples", 20},
                {"tsne_per_group", 12},
                {"tsne", {{"perplexity", 3}, {"iterations", 60}}}};
}

}  // namespace

TEST_CASE("experiment configs parse strictly") {
    const auto c = harness::ExperimentConfig::from_json(tiny_config("verification"));
    CHECK(c.kind == harness::ExperimentKind::verification);
    CHECK(c.tau == 0.9);
    CHECK(c.m == 20);
    CHECK(c.gan.steps == 8);
    CHECK(harness::ExperimentConfig::from_json(c.to_json()).hash() == c.hash());

    auto j = tiny_config("verification");
    j["bogus"] = 1;
    CHECK_THROWS_AS(harness::ExperimentConfig::from_json(j), PreconditionError);
    j = tiny_config("verification");
    j["gan"]["momentum"] = 0.5;
    CHECK_THROWS_AS(harness::ExperimentConfig::from_json(j), PreconditionError);
    j = tiny_config("verification");
    j["tau"] = 1.0;
    CHECK_THROWS_AS(harness::ExperimentConfig::from_json(j), PreconditionError);
    j = tiny_config("nonsense");
    CHECK_THROWS_AS(harness::ExperimentConfig::from_json(j), PreconditionError);
    j = tiny_config("verification");
    j["suspects"] = {"PS", "Ind-z"};
    CHECK_THROWS_AS(harness::ExperimentConfig::from_json(j), PreconditionError);

    const auto sweep = harness::ExperimentConfig::from_json(tiny_config("obfuscation_sweep"));
    CHECK(sweep.attacks.size() == 11);
    auto other = tiny_config("verification");
    other["name"] = "renamed";
    CHECK(harness::ExperimentConfig::from_json(other).hash() == c.hash());
    other["m"] = 21;
    CHECK(harness::ExperimentConfig::from_json(other).hash() != c.hash());
}

TEST_CASE("cache root honours the environment") {
    ::unsetenv("GANGUARDS_CACHE");
    CHECK(harness::cache_root("out") == std::filesystem::path("out") / "cache");
    ::setenv("GANGUARDS_CACHE", "/tmp/elsewhere", 1);
    CHECK(harness::cache_root("out") == std::filesystem::path("/tmp/elsewhere"));
    ::unsetenv("GANGUARDS_CACHE");
}

TEST_CASE("artifact cache builds once and rebuilds corrupt entries") {
    const auto dir = fixtures::scratch_dir("cache");
    harness::ArtifactCache cache(dir);
    int builds = 0;
    const json recipe{{"role", "thing"}, {"x", 1}};
    auto get = [&] {
        return cache.get<std::string>(
            recipe, [&] { ++builds; return std::string("value"); },
            [](const std::string& v, const std::filesystem::path& d) { std::ofstream(d / "v.txt") << v; },
            [](const std::filesystem::path& d) {
                std::ifstream in(d / "v.txt");
                std::string v;
                in >> v;
                if (v != "value") throw CorruptionError("bad cache payload");
                return v;
            });
    };
    CHECK(get() == "value");
    CHECK(get() == "value");
    CHECK(builds == 1);
    CHECK(cache.hits() == 1);
    std::ofstream(cache.slot(recipe) / "v.txt") << "garbage";
    CHECK(get() == "value");
    CHECK(builds == 2);
    CHECK(harness::ArtifactCache::key(recipe) != harness::ArtifactCache::key(json{{"role", "thing"}, {"x", 2}}));
}

TEST_CASE("tiny experiments are reproducible and reuse the cache") {
    const auto root = fixtures::scratch_dir("experiments");
    const auto config = harness::ExperimentConfig::from_json(tiny_config("verification"));
    harness::ArtifactCache first(root / "cache-a"), second(root / "cache-b");
    const auto a = harness::run_experiment(config, root / "a", first);
    const auto b = harness::run_experiment(config, root / "b", second);
    REQUIRE(a.trials.size() == 2);
    CHECK(a.trials[0].reports.size() == 4);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(a.trials[t].reports[i].to_json(false).dump() == b.trials[t].reports[i].to_json(false).dump());
    CHECK(a.to_json(false) == b.to_json(false));

    const int built = first.builds();
    const auto again = harness::run_experiment(config, root / "c", first);
    CHECK(first.builds() == built);
    CHECK(again.to_json(false) == a.to_json(false));

    for (const char* sub : {"models", "classifiers", "reports", "figures"})
        CHECK(std::filesystem::exists(root / "a" / sub / "manifest.json"));
    CHECK(std::filesystem::exists(root / "a" / "figures" / "verification.svg"));
    CHECK(std::filesystem::exists(root / "a" / "figures" / "tsne.svg"));
    const auto loaded = harness::load_record(root / "a");
    CHECK(loaded.to_json(false) == a.to_json(false));
    CHECK(a.trials[0].tables.contains("zoo"));
    CHECK(a.trials[0].tables.contains("tsne"));
}

TEST_CASE("every experiment kind runs at tiny scale") {
    const auto root = fixtures::scratch_dir("kinds");
    harness::ArtifactCache cache(root / "cache");
    for (const char* kind : {"obfuscation_sweep", "cross_arch_extraction", "generations", "sample_count_sweep",
                             "adaptive_I", "adaptive_II", "finetune"}) {
        auto j = tiny_config(kind);
        j["trial_seeds"] = {1};
        const auto config = harness::ExperimentConfig::from_json(j);
        const auto rec = harness::run_experiment(config, root / kind, cache);
        CAPTURE(kind);
        REQUIRE(rec.trials.size() == 1);
        CHECK(!rec.trials[0].reports.empty());
        CHECK(!rec.figures.empty());
        for (const auto& f : rec.figures) CHECK(std::filesystem::exists(root / kind / f));
    }
    const auto gens = harness::load_record(root / "generations");
    CHECK(gens.trials[0].tables.at("generations").size() == 2);
    const auto sweep = harness::load_record(root / "sample_count_sweep");
    CHECK(sweep.trials[0].tables.at("sample_count").at("PS").size() == 2);
}

#ifdef GANGUARDS_CLI
TEST_CASE("cli exit codes") {
    const auto dir = fixtures::scratch_dir("cli");
    const std::string cli = GANGUARDS_CLI;
    auto run = [&](const std::string& args) {
        const int status = std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    CHECK(run("make-data --out " + dir.string() + " --count 30 --size 16 --seed 3") == 0);
    CHECK(std::filesystem::exists(dir / "data" / "manifest.json"));
    CHECK(run("verify --out " + dir.string() + " --model " + dir.string() + "/models/none") == 2);
    CHECK(run("verify --out " + dir.string() + " --classifier " + dir.string() + "/missing --model x") == 2);
    CHECK(run("experiment run --out " + dir.string()) == 2);
    CHECK(run("train-gan --data " + dir.string() + "/data --part IV --out " + dir.string()) == 2);
    CHECK(run("no-such-command") == 2);
}
#endif
