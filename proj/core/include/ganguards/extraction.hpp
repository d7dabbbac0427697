#pragma once

// Model extraction: retrain a substitute generator purely on samples drawn
// from a victim generator, optionally chained over several generations.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ganguards/gan.hpp"

namespace ganguards::extraction {

struct ExtractionResult {
    zoo::GeneratorModel substitute;
    std::vector<zoo::Checkpoint> snapshots;
    /// Provenance of the query set the substitute was trained on.
    std::string training_provenance;
};

/// Samples `query_budget` images from `victim` using latents seeded by
/// `query_seed` and trains an `attacker_arch` generator on them alone.
ExtractionResult extract_model(const zoo::GeneratorModel& victim, int query_budget, zoo::ArchId attacker_arch,
                               const zoo::TrainConfig& config, std::uint64_t query_seed,
                               const zoo::TrainObserver& observer = {});

struct ChainResult {
    /// Generation i+1 at index i; each extracted from the previous one.
    std::vector<zoo::GeneratorModel> models;
    /// Set when a generation diverged; `models` then holds the completed prefix.
    std::optional<std::string> aborted;
};

/// Repeated extraction. Every generation reuses `attacker_arch`; per-generation
/// training and query seeds are derived from `seed`.
ChainResult extraction_chain(const zoo::GeneratorModel& root, int generations, int query_budget,
                             zoo::ArchId attacker_arch, const zoo::TrainConfig& config, std::uint64_t seed);

/// Nested layout: dir/gen-1/, dir/gen-1/gen-2/, ... each with model files,
/// plus dir/chain.json listing the ancestry.
void save_chain(const zoo::GeneratorModel& root, const ChainResult& chain, const std::filesystem::path& dir);
std::vector<zoo::GeneratorModel> load_chain(const std::filesystem::path& dir);

}  // namespace ganguards::extraction
