#include "ganguards/extraction.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "ganguards/error.hpp"
#include "ganguards/hash.hpp"

namespace ganguards::extraction {

namespace fs = std::filesystem;

ExtractionResult extract_model(const zoo::GeneratorModel& victim, int query_budget, zoo::ArchId attacker_arch,
                               const zoo::TrainConfig& config, std::uint64_t query_seed,
                               const zoo::TrainObserver& observer) {
    config.validate();
    require(query_budget >= config.batch_size, "extract_model: query budget must be at least the batch size");
    require(victim.trained_steps() > 0, "extract_model: victim is untrained");

    const data::ImageBatch queries =
        zoo::sample(victim, data::sample_prior(query_budget, victim.latent_dim(), query_seed))
            .tagged("queries#" + std::to_string(query_seed));

    zoo::TrainResult trained = zoo::train_gan(queries, attacker_arch, victim.latent_dim(), config, observer);

    zoo::Lineage lin = trained.model.lineage();
    const zoo::Lineage& parent = victim.lineage();
    lin.role = zoo::Role::substitute;
    lin.parent_id = parent.id;
    lin.generation_index = parent.generation_index + 1;
    lin.derivation = "extraction";
    lin.ancestry = parent.ancestry;
    lin.ancestry.push_back(parent.id);
    lin.ancestry_arch = parent.ancestry_arch;
    lin.ancestry_arch.push_back(zoo::to_string(victim.arch()));
    zoo::validate_lineage(lin);

    trained.model.lineage() = lin;
    for (auto& snap : trained.snapshots) snap.model.lineage() = lin;
    return ExtractionResult{std::move(trained.model), std::move(trained.snapshots), queries.provenance()};
}

ChainResult extraction_chain(const zoo::GeneratorModel& root, int generations, int query_budget,
                             zoo::ArchId attacker_arch, const zoo::TrainConfig& config, std::uint64_t seed) {
    require(generations >= 1, "extraction_chain: at least one generation is required");
    ChainResult chain;
    const zoo::GeneratorModel* victim = &root;
    for (int g = 1; g <= generations; ++g) {
        zoo::TrainConfig cfg = config;
        cfg.seed = mix64(seed ^ mix64(0x7a11ULL + static_cast<std::uint64_t>(g)));
        const std::uint64_t queries = mix64(seed ^ mix64(0x9e7ULL + static_cast<std::uint64_t>(g)));
        try {
            chain.models.push_back(extract_model(*victim, query_budget, attacker_arch, cfg, queries).substitute);
        } catch (const zoo::DivergenceError& e) {
            chain.aborted = "generation " + std::to_string(g) + ": " + e.what();
            break;
        }
        victim = &chain.models.back();
    }
    return chain;
}

void save_chain(const zoo::GeneratorModel& root, const ChainResult& chain, const fs::path& dir) {
    fs::create_directories(dir);
    nlohmann::json manifest{{"root", zoo::to_json(root.lineage())}, {"generations", nlohmann::json::array()}};
    fs::path level = dir;
    for (std::size_t i = 0; i < chain.models.size(); ++i) {
        level /= "gen-" + std::to_string(i + 1);
        zoo::save_model(chain.models[i], level);
        manifest["generations"].push_back(
            {{"path", fs::relative(level, dir).string()}, {"lineage", zoo::to_json(chain.models[i].lineage())}});
    }
    if (chain.aborted) manifest["aborted"] = *chain.aborted;
    std::ofstream(dir / "chain.json") << manifest.dump(2) << '\n';
}

std::vector<zoo::GeneratorModel> load_chain(const fs::path& dir) {
    std::ifstream in(dir / "chain.json");
    require(static_cast<bool>(in), "no chain manifest in " + dir.string());
    const auto manifest = nlohmann::json::parse(in);
    std::vector<zoo::GeneratorModel> models;
    for (const auto& gen : manifest.at("generations"))
        models.push_back(zoo::load_model(dir / gen.at("path").get<std::string>()));
    return models;
}

}  // namespace ganguards::extraction
