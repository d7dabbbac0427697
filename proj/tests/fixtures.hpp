#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "ganguards/data.hpp"
#include "ganguards/gan.hpp"

namespace fixtures {

inline ganguards::zoo::TrainConfig tiny_training(std::uint64_t seed, int steps = 8) {
    ganguards::zoo::TrainConfig c;
    c.steps = steps;
    c.batch_size = 8;
    c.snapshot_every = steps / 2;
    c.seed = seed;
    return c;
}

inline ganguards::data::ImageBatch shapes(int count, std::uint64_t seed, const std::string& family = "blobs") {
    return ganguards::data::make_procedural_dataset({family, 16, 3}, count, seed);
}

inline ganguards::data::ImageBatch random_images(int count, int size, int channels, std::uint64_t seed) {
    ganguards::nn::Tensor t(count, channels, size, size);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : t.values()) v = u(rng);
    return {std::move(t), "random"};
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("ganguards-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures
