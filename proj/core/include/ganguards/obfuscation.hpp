#pragma once

// Attacker-side evasion: latent resampling, output perturbations, fine-tuning,
// snapshot selection and combined graded perturbations.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganguards/data.hpp"
#include "ganguards/gan.hpp"
#include "ganguards/metrics.hpp"
#include "ganguards/protection.hpp"

namespace ganguards::obfuscation {

enum class AttackKind { input_perturb, oup_a_noise, oup_b_filter, oup_c_blur, oup_d_jpeg, fine_tune, adaptive_I, adaptive_II };
enum class Base { PS, ME };
enum class Strategy { I, II, III };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& text);
std::string to_string(Base base);
Base parse_base(const std::string& text);
std::string to_string(Strategy strategy);
Strategy parse_strategy(const std::string& text);

/// a: additive noise sigma, b: normalized Gaussian filter sigma,
/// c: reflect-padded Gaussian blur sigma, d: JPEG quality as a fraction.
enum class OutputKind { a, b, c, d };

char to_char(OutputKind kind);
OutputKind parse_output_kind(const std::string& text);

/// Default output-perturbation magnitudes, in a/b/c/d order.
inline constexpr std::array<double, 4> kPaperMagnitudes{0.01, 0.4, 0.5, 0.85};

/// Combined a/b/c/d magnitudes for each adaptive strategy.
std::array<double, 4> strategy_magnitudes(Strategy strategy);

struct AttackSpec {
    AttackKind kind = AttackKind::input_perturb;
    std::vector<double> magnitudes;
    Base base = Base::PS;
    std::optional<Strategy> strategy;

    /// Throws PreconditionError on out-of-range magnitudes or a missing strategy.
    void validate() const;
    nlohmann::json to_json() const;
    static AttackSpec from_json(const nlohmann::json& j);
};

/// Fresh Gaussian latents; provenance gains "Inp".
data::ImageBatch input_perturb(const zoo::GeneratorModel& model, int count, std::uint64_t seed);

/// Pure, count/shape preserving, output clamped to [0,1]; provenance gains
/// "Oup-<kind>:<magnitude>". `noise_seed` only matters for kind a.
data::ImageBatch output_perturb(const data::ImageBatch& images, OutputKind kind, double magnitude,
                                std::uint64_t noise_seed = 0);

/// 1-D Gaussian taps for sigma (radius ceil(3 sigma)); {1} for sigma == 0.
std::vector<double> gaussian_taps(double sigma);

/// Baseline JPEG round trip at integer quality 1..100 with 4:4:4 sampling.
data::ImageBatch jpeg_round_trip(const data::ImageBatch& images, int quality);
/// The baseline JPEG bitstream of one image, as used by the round trip.
std::vector<std::uint8_t> encode_jpeg(const data::ImageBatch& images, int index, int quality);

/// Wholly fine-tunes `stolen` on `new_data`. Zero steps returns the input
/// weights unchanged. `original_data`, when given, is checked for overlap.
zoo::GeneratorModel fine_tune(const zoo::GeneratorModel& stolen, const data::ImageBatch& new_data,
                              const zoo::TrainConfig& config, const data::ImageBatch* original_data = nullptr);

struct SnapshotPoint {
    int step = 0;
    metrics::FidResult fidelity;  // FID(snapshot samples, victim samples)
    protection::VerificationReport report;
};

/// Scores every snapshot of an extraction run against the victim.
std::vector<SnapshotPoint> adaptive_attack_I(const std::vector<zoo::Checkpoint>& snapshots,
                                             const zoo::GeneratorModel& victim,
                                             const protection::ProtectionClassifier& clf,
                                             const metrics::FeatureExtractor& extractor, double tau, int m,
                                             int fid_samples, std::uint64_t sample_seed);

/// Applies a, b, c, d in that order with the strategy's magnitudes.
data::ImageBatch adaptive_attack_II(const data::ImageBatch& images, Strategy strategy, std::uint64_t noise_seed = 0);

struct OverwriteRecord {
    bool applicable = false;
    std::string reason;

    nlohmann::json to_json() const;
};

OverwriteRecord overwrite_attack();

}  // namespace ganguards::obfuscation
