#include "ganguards/data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "ganguards/error.hpp"
#include "ganguards/hash.hpp"

namespace ganguards::data {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- ImageBatch

ImageBatch::ImageBatch(nn::Tensor pixels, std::string provenance)
    : pixels_(std::move(pixels)), provenance_(std::move(provenance)) {}

void ImageBatch::validate() const {
    require(count() >= 1, "image batch is empty");
    require(pixels_.h() == pixels_.w(), "image batch is not square");
    require(channels() == 1 || channels() == 3, "image batch must have 1 or 3 channels");
    require(!provenance_.empty(), "image batch has no provenance");
    for (float v : pixels_.values())
        require(v >= 0.0f && v <= 1.0f, "pixel value outside [0,1]");
}

std::string append_tag(const std::string& chain, const std::string& tag) {
    if (chain.empty()) return tag;
    if (tag.empty()) return chain;
    return chain + "/" + tag;
}

ImageBatch ImageBatch::tagged(const std::string& tag) const& {
    return ImageBatch(pixels_, append_tag(provenance_, tag));
}

ImageBatch ImageBatch::tagged(const std::string& tag) && {
    provenance_ = append_tag(provenance_, tag);
    return std::move(*this);
}

ImageBatch ImageBatch::slice(int first, int n) const { return ImageBatch(pixels_.slice(first, n), provenance_); }

ImageBatch ImageBatch::select(std::span<const int> indices) const {
    nn::Tensor out(static_cast<int>(indices.size()), channels(), size(), size());
    const std::size_t stride = pixels_.stride();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] >= 0 && indices[i] < count(), "select: index out of range");
        std::copy_n(pixels_.sample(indices[i]), stride, out.sample(static_cast<int>(i)));
    }
    return ImageBatch(std::move(out), provenance_);
}

std::vector<std::uint8_t> ImageBatch::image_bytes(int index) const {
    const int s = size(), ch = channels();
    std::vector<std::uint8_t> out(static_cast<std::size_t>(s) * s * ch);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            for (int c = 0; c < ch; ++c) {
                const float v = std::clamp(pixels_.at(index, c, y, x), 0.0f, 1.0f);
                out[(static_cast<std::size_t>(y) * s + x) * ch + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
    return out;
}

std::string ImageBatch::image_hash(int index) const { return sha256_hex(image_bytes(index)); }

std::string ImageBatch::content_hash() const {
    const auto v = pixels_.values();
    std::vector<std::uint8_t> header(16);
    const int dims[4] = {pixels_.n(), pixels_.c(), pixels_.h(), pixels_.w()};
    std::memcpy(header.data(), dims, sizeof dims);
    header.insert(header.end(), reinterpret_cast<const std::uint8_t*>(v.data()),
                  reinterpret_cast<const std::uint8_t*>(v.data() + v.size()));
    return sha256_hex(header);
}

ImageBatch concat(std::span<const ImageBatch* const> parts) {
    require(!parts.empty(), "concat of zero batches");
    std::vector<const nn::Tensor*> tensors;
    std::string provenance;
    for (const ImageBatch* b : parts) {
        tensors.push_back(&b->pixels());
        provenance += (provenance.empty() ? "" : "+") + b->provenance();
    }
    return ImageBatch(nn::concat(tensors), provenance);
}

// ---------------------------------------------------------------- latents

LatentBatch sample_prior(int count, int latent_dim, std::uint64_t seed) {
    require(count >= 1, "sample_prior: count must be >= 1");
    require(latent_dim >= 1, "sample_prior: latent_dim must be >= 1");
    LatentBatch batch;
    batch.codes = nn::Tensor(count, latent_dim, 1, 1);
    batch.seed = seed;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& v : batch.codes.values()) v = normal(rng);
    return batch;
}

// ---------------------------------------------------------------- split

DatasetSplit split_three_way(const ImageBatch& data, std::uint64_t seed) {
    require(data.count() >= 3 && data.count() % 3 == 0, "split_three_way: count must be a positive multiple of 3");
    std::vector<int> order(static_cast<std::size_t>(data.count()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const auto third = static_cast<std::ptrdiff_t>(order.size() / 3);
    auto part = [&](std::ptrdiff_t k, const char* name) {
        std::vector<int> idx(order.begin() + k * third, order.begin() + (k + 1) * third);
        return data.select(idx).tagged(name);
    };
    DatasetSplit split;
    split.part_I = part(0, "part-I");
    split.part_II = part(1, "part-II");
    split.part_III = part(2, "part-III");
    split.source_name = data.provenance();
    split.seed = seed;
    return split;
}

// ---------------------------------------------------------------- seeds

std::uint64_t SeedPolicy::derive(const std::string& label) const {
    const std::string digest = sha256_hex(label);
    const std::uint64_t label_bits = std::stoull(digest.substr(0, 16), nullptr, 16);
    return mix64(global_seed_ ^ mix64(label_bits));
}

std::uint64_t SeedPolicy::stream(const std::string& label) {
    const std::uint64_t s = derive(label);
    streams_[label] = s;
    return s;
}

// ---------------------------------------------------------------- procedural

const std::vector<std::string>& known_families() {
    static const std::vector<std::string> names{"blobs", "rings", "stripes"};
    return names;
}

namespace {

struct Canvas {
    int size, channels;
    std::vector<float> rgb;  // size*size*3, composited in colour then reduced

    Canvas(int s, int ch) : size(s), channels(ch), rgb(static_cast<std::size_t>(s) * s * 3) {}

    void fill(const std::array<float, 3>& c) {
        for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = c[i % 3];
    }
    void blend(int x, int y, const std::array<float, 3>& c, float alpha) {
        float* p = &rgb[(static_cast<std::size_t>(y) * size + x) * 3];
        for (int k = 0; k < 3; ++k) p[k] = p[k] * (1.0f - alpha) + c[k] * alpha;
    }
};

std::array<float, 3> random_colour(std::mt19937_64& rng, float lo, float hi) {
    std::uniform_real_distribution<float> u(lo, hi);
    return {u(rng), u(rng), u(rng)};
}

void draw_blobs(Canvas& cv, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);
    const float s = static_cast<float>(cv.size);
    cv.fill(random_colour(rng, 0.0f, 0.3f));
    const int blobs = 2 + static_cast<int>(u01(rng) * 3.0f);
    for (int b = 0; b < blobs; ++b) {
        const float cx = s * (0.2f + 0.6f * u01(rng));
        const float cy = s * (0.2f + 0.6f * u01(rng));
        const float sigma = s * (0.08f + 0.1f * u01(rng));
        const auto colour = random_colour(rng, 0.3f, 1.0f);
        for (int y = 0; y < cv.size; ++y)
            for (int x = 0; x < cv.size; ++x) {
                const float d2 = (x + 0.5f - cx) * (x + 0.5f - cx) + (y + 0.5f - cy) * (y + 0.5f - cy);
                cv.blend(x, y, colour, std::exp(-d2 / (2.0f * sigma * sigma)));
            }
    }
}

void draw_rings(Canvas& cv, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);
    const float s = static_cast<float>(cv.size);
    cv.fill(random_colour(rng, 0.0f, 0.3f));
    const int rings = 1 + static_cast<int>(u01(rng) * 2.0f);
    for (int r = 0; r < rings; ++r) {
        const float cx = s * (0.3f + 0.4f * u01(rng));
        const float cy = s * (0.3f + 0.4f * u01(rng));
        const float radius = s * (0.15f + 0.2f * u01(rng));
        const float width = s * (0.04f + 0.05f * u01(rng));
        const auto colour = random_colour(rng, 0.4f, 1.0f);
        for (int y = 0; y < cv.size; ++y)
            for (int x = 0; x < cv.size; ++x) {
                const float d = std::hypot(x + 0.5f - cx, y + 0.5f - cy) - radius;
                cv.blend(x, y, colour, std::exp(-d * d / (2.0f * width * width)));
            }
    }
}

void draw_stripes(Canvas& cv, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);
    const float theta = std::numbers::pi_v<float> * u01(rng);
    const float freq = 0.08f + 0.17f * u01(rng);  // cycles per pixel
    const float phase = 2.0f * std::numbers::pi_v<float> * u01(rng);
    const auto a = random_colour(rng, 0.0f, 0.5f);
    const auto b = random_colour(rng, 0.5f, 1.0f);
    const float cs = std::cos(theta), sn = std::sin(theta);
    for (int y = 0; y < cv.size; ++y)
        for (int x = 0; x < cv.size; ++x) {
            const float t = 0.5f + 0.5f * std::sin(2.0f * std::numbers::pi_v<float> * freq * (x * cs + y * sn) + phase);
            float* p = &cv.rgb[(static_cast<std::size_t>(y) * cv.size + x) * 3];
            for (int k = 0; k < 3; ++k) p[k] = a[k] * (1.0f - t) + b[k] * t;
        }
}

float quantize(float v) { return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f; }

}  // namespace

ImageBatch make_procedural_dataset(const ShapeFamily& family, int count, std::uint64_t seed) {
    require(count >= 3 && count % 3 == 0, "make_procedural_dataset: count must be a positive multiple of 3");
    require(family.size >= 4 && family.size <= 128, "make_procedural_dataset: size must be in [4,128]");
    require(family.channels == 1 || family.channels == 3, "make_procedural_dataset: channels must be 1 or 3");
    void (*draw)(Canvas&, std::mt19937_64&) = nullptr;
    if (family.name == "blobs") draw = draw_blobs;
    else if (family.name == "rings") draw = draw_rings;
    else if (family.name == "stripes") draw = draw_stripes;
    else throw PreconditionError("unknown shape family: " + family.name);

    nn::Tensor pixels(count, family.channels, family.size, family.size);
    for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(i) + 1)));
        Canvas cv(family.size, family.channels);
        draw(cv, rng);
        for (int y = 0; y < family.size; ++y)
            for (int x = 0; x < family.size; ++x) {
                const float* p = &cv.rgb[(static_cast<std::size_t>(y) * family.size + x) * 3];
                if (family.channels == 3) {
                    for (int c = 0; c < 3; ++c) pixels.at(i, c, y, x) = quantize(p[c]);
                } else {
                    pixels.at(i, 0, y, x) = quantize(0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2]);
                }
            }
    }
    return ImageBatch(std::move(pixels), "data:" + family.name + "#" + std::to_string(seed));
}

// ---------------------------------------------------------------- PNG I/O

void write_png(const fs::path& file, std::span<const std::uint8_t> interleaved, int size, int channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(size);
    img.height = static_cast<png_uint_32>(size);
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, file.string().c_str(), 0, interleaved.data(), 0, nullptr))
        throw std::runtime_error("cannot write PNG " + file.string() + ": " + img.message);
}

namespace {

struct DecodedPng {
    int size = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;
};

DecodedPng read_png(const fs::path& file, bool force_colour) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, file.string().c_str()))
        throw PreconditionError("cannot read PNG " + file.string() + ": " + img.message);
    const bool colour = force_colour || (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    DecodedPng out;
    out.channels = colour ? 3 : 1;
    if (img.width != img.height) {
        png_image_free(&img);
        throw PreconditionError("non-square image: " + file.string());
    }
    out.size = static_cast<int>(img.width);
    out.bytes.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.bytes.data(), 0, nullptr))
        throw PreconditionError("cannot decode PNG " + file.string() + ": " + img.message);
    return out;
}

bool png_is_colour(const fs::path& file) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, file.string().c_str()))
        throw PreconditionError("cannot read PNG " + file.string() + ": " + img.message);
    const bool colour = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png_image_free(&img);
    return colour;
}

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
    require(fs::is_directory(dir), "not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

ImageBatch load_image_folder(const fs::path& dir, const std::string& provenance) {
    const auto files = sorted_pngs(dir);
    require(!files.empty(), "no PNG files under " + dir.string());
    const bool colour = std::any_of(files.begin(), files.end(), png_is_colour);

    nn::Tensor pixels;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const DecodedPng png = read_png(files[i], colour);
        if (i == 0) pixels = nn::Tensor(static_cast<int>(files.size()), png.channels, png.size, png.size);
        require(png.size == pixels.h(), "image size mismatch: " + files[i].string());
        for (int y = 0; y < png.size; ++y)
            for (int x = 0; x < png.size; ++x)
                for (int c = 0; c < png.channels; ++c)
                    pixels.at(static_cast<int>(i), c, y, x) =
                        png.bytes[(static_cast<std::size_t>(y) * png.size + x) * png.channels + c] / 255.0f;
    }
    return ImageBatch(std::move(pixels), provenance.empty() ? "folder:" + dir.filename().string() : provenance);
}

void write_image_folder(const ImageBatch& batch, const fs::path& dir) {
    fs::create_directories(dir);
    const int digits = std::max(5, static_cast<int>(std::to_string(batch.count()).size()));
    for (int i = 0; i < batch.count(); ++i) {
        std::string name = std::to_string(i);
        name.insert(0, static_cast<std::size_t>(digits) - name.size(), '0');
        write_png(dir / (name + ".png"), batch.image_bytes(i), batch.size(), batch.channels());
    }
}

void save_split(const DatasetSplit& split, const fs::path& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["source_name"] = split.source_name;
    manifest["seed"] = split.seed;
    const std::pair<const char*, const ImageBatch*> parts[] = {
        {"part_I", &split.part_I}, {"part_II", &split.part_II}, {"part_III", &split.part_III}};
    for (const auto& [name, batch] : parts) {
        write_image_folder(*batch, dir / name);
        json hashes = json::array();
        for (int i = 0; i < batch->count(); ++i) hashes.push_back(batch->image_hash(i));
        manifest["parts"][name] = {{"count", batch->count()}, {"provenance", batch->provenance()}, {"hashes", hashes}};
    }
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

DatasetSplit load_split(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    require(static_cast<bool>(in), "missing split manifest in " + dir.string());
    const json manifest = json::parse(in);
    DatasetSplit split;
    split.source_name = manifest.at("source_name").get<std::string>();
    split.seed = manifest.at("seed").get<std::uint64_t>();
    auto load = [&](const char* name) {
        const json& meta = manifest.at("parts").at(name);
        ImageBatch batch = load_image_folder(dir / name, meta.at("provenance").get<std::string>());
        require(batch.count() == meta.at("count").get<int>(), std::string("split part count mismatch: ") + name);
        const auto& hashes = meta.at("hashes");
        for (int i = 0; i < batch.count(); ++i)
            if (batch.image_hash(i) != hashes.at(static_cast<std::size_t>(i)).get<std::string>())
                throw CorruptionError(std::string("split part content hash mismatch: ") + name);
        return batch;
    };
    split.part_I = load("part_I");
    split.part_II = load("part_II");
    split.part_III = load("part_III");
    return split;
}

}  // namespace ganguards::data
