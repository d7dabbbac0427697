#pragma once

// Canonical image and latent containers, deterministic seeding and the
// three-way dataset split consumed by every downstream stage.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ganguards/nn.hpp"

namespace ganguards::data {

/// A batch of square images with values in [0,1].
///
/// Pixels are stored planar (count x channels x size x size) so the batch can
/// be fed to the network engine without copies. The canonical byte encoding
/// used for hashing and PNG export is interleaved 8-bit (row-major, HWC).
class ImageBatch {
public:
    ImageBatch() = default;
    ImageBatch(nn::Tensor pixels, std::string provenance);

    int count() const { return pixels_.n(); }
    int size() const { return pixels_.h(); }
    int channels() const { return pixels_.c(); }
    const nn::Tensor& pixels() const { return pixels_; }
    nn::Tensor& mutable_pixels() { return pixels_; }
    const std::string& provenance() const { return provenance_; }

    /// Throws PreconditionError if any invariant is violated.
    void validate() const;

    /// Provenance chain with `tag` appended ("a/b" + "c" -> "a/b/c").
    ImageBatch tagged(const std::string& tag) const&;
    ImageBatch tagged(const std::string& tag) &&;
    ImageBatch slice(int first, int count) const;
    ImageBatch select(std::span<const int> indices) const;

    std::vector<std::uint8_t> image_bytes(int index) const;
    std::string image_hash(int index) const;
    /// Hash over the whole batch content (not the provenance).
    std::string content_hash() const;

private:
    nn::Tensor pixels_;
    std::string provenance_;
};

std::string append_tag(const std::string& chain, const std::string& tag);

/// Concatenates batches of equal geometry; provenance is joined with '+'.
ImageBatch concat(std::span<const ImageBatch* const> parts);

struct LatentBatch {
    nn::Tensor codes;  // count x latent_dim x 1 x 1
    std::string prior = "gaussian";
    std::uint64_t seed = 0;

    int count() const { return codes.n(); }
    int latent_dim() const { return codes.c(); }
};

/// Standard-normal latent codes; bit-identical for equal arguments.
LatentBatch sample_prior(int count, int latent_dim, std::uint64_t seed);

struct DatasetSplit {
    ImageBatch part_I;
    ImageBatch part_II;
    ImageBatch part_III;
    std::string source_name;
    std::uint64_t seed = 0;
};

/// Deterministic permutation into three disjoint, equal parts.
DatasetSplit split_three_way(const ImageBatch& data, std::uint64_t seed);

/// Every random draw in a run comes from a labelled stream derived here.
class SeedPolicy {
public:
    explicit SeedPolicy(std::uint64_t global_seed = 0) : global_seed_(global_seed) {}

    std::uint64_t global_seed() const { return global_seed_; }
    /// Seed of the stream `label`; the label is recorded for audit.
    std::uint64_t stream(const std::string& label);
    /// Pure derivation, no bookkeeping.
    std::uint64_t derive(const std::string& label) const;
    const std::map<std::string, std::uint64_t>& streams() const { return streams_; }

private:
    std::uint64_t global_seed_;
    std::map<std::string, std::uint64_t> streams_;
};

struct ShapeFamily {
    std::string name = "blobs";  // blobs | rings | stripes
    int size = 32;
    int channels = 3;
};

const std::vector<std::string>& known_families();

/// Procedural stand-in for a real image dataset. Values are quantized to the
/// 8-bit grid so PNG export is lossless.
ImageBatch make_procedural_dataset(const ShapeFamily& family, int count, std::uint64_t seed);

// ---- persistence

/// Reads every PNG under `dir` (recursively, lexicographic path order).
ImageBatch load_image_folder(const std::filesystem::path& dir, const std::string& provenance = {});
void write_image_folder(const ImageBatch& batch, const std::filesystem::path& dir);
void write_png(const std::filesystem::path& file, std::span<const std::uint8_t> interleaved, int size, int channels);

/// Three PNG directories plus manifest.json with counts and content hashes.
void save_split(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit load_split(const std::filesystem::path& dir);

}  // namespace ganguards::data
