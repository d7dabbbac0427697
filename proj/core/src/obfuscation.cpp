#include "ganguards/obfuscation.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <jpeglib.h>

#include "ganguards/error.hpp"
#include "ganguards/hash.hpp"

namespace ganguards::obfuscation {

using nlohmann::json;

namespace {

const char* const kAttackNames[] = {"input_perturb", "oup_a_noise", "oup_b_filter", "oup_c_blur",
                                    "oup_d_jpeg",    "fine_tune",   "adaptive_I",   "adaptive_II"};

std::string format_magnitude(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

// Mirror index without repeating the edge sample (…2 1 0 1 2…).
int reflect(int i, int size) {
    if (size == 1) return 0;
    const int period = 2 * (size - 1);
    i = std::abs(i) % period;
    return i < size ? i : period - i;
}

enum class Border { reflect, renormalize };

// Separable convolution of every plane with `taps` (odd length, centred).
nn::Tensor convolve(const nn::Tensor& x, const std::vector<double>& taps, Border border) {
    const int r = static_cast<int>(taps.size() / 2);
    const int h = x.h(), w = x.w();
    nn::Tensor tmp(x.n(), x.c(), h, w), out(x.n(), x.c(), h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t planes = static_cast<std::size_t>(x.n()) * x.c();

    auto pass = [&](const float* src, float* dst, bool horizontal) {
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double acc = 0.0, weight = 0.0;
                for (int k = -r; k <= r; ++k) {
                    int sy = y, sx = xx;
                    (horizontal ? sx : sy) += k;
                    const int limit = horizontal ? w : h;
                    int& idx = horizontal ? sx : sy;
                    if (idx < 0 || idx >= limit) {
                        if (border == Border::renormalize) continue;
                        idx = reflect(idx, limit);
                    }
                    const double t = taps[static_cast<std::size_t>(k + r)];
                    acc += t * src[sy * w + sx];
                    weight += t;
                }
                dst[y * w + xx] = static_cast<float>(border == Border::renormalize ? acc / weight : acc);
            }
    };
    for (std::size_t p = 0; p < planes; ++p) {
        pass(x.data() + p * plane, tmp.data() + p * plane, true);
        pass(tmp.data() + p * plane, out.data() + p * plane, false);
    }
    return out;
}

void clamp_unit(nn::Tensor& t) {
    for (float& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
}

std::vector<std::uint8_t> jpeg_encode(const std::uint8_t* pixels, int size, int channels, int quality) {
    jpeg_compress_struct cinfo{};
    jpeg_error_mgr jerr{};
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_compress(&cinfo);
    unsigned char* buffer = nullptr;
    unsigned long length = 0;
    jpeg_mem_dest(&cinfo, &buffer, &length);
    cinfo.image_width = static_cast<JDIMENSION>(size);
    cinfo.image_height = static_cast<JDIMENSION>(size);
    cinfo.input_components = channels;
    cinfo.in_color_space = channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    cinfo.dct_method = JDCT_FLOAT;
    if (channels == 3) jpeg_set_colorspace(&cinfo, JCS_RGB);
    for (int c = 0; c < cinfo.num_components; ++c) {
        cinfo.comp_info[c].h_samp_factor = 1;
        cinfo.comp_info[c].v_samp_factor = 1;
    }
    jpeg_start_compress(&cinfo, TRUE);
    const std::size_t row_bytes = static_cast<std::size_t>(size) * channels;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(pixels + cinfo.next_scanline * row_bytes);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    std::vector<std::uint8_t> bytes(buffer, buffer + length);
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    return bytes;
}

std::vector<std::uint8_t> jpeg_decode(const std::vector<std::uint8_t>& bytes, int size, int channels) {
    jpeg_decompress_struct cinfo{};
    jpeg_error_mgr jerr{};
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
    cinfo.dct_method = JDCT_FLOAT;
    jpeg_start_decompress(&cinfo);
    if (static_cast<int>(cinfo.output_width) != size || static_cast<int>(cinfo.output_components) != channels) {
        jpeg_destroy_decompress(&cinfo);
        throw NumericalError("jpeg round trip changed the image geometry");
    }
    std::vector<std::uint8_t> out(static_cast<std::size_t>(size) * size * channels);
    const std::size_t row_bytes = static_cast<std::size_t>(size) * channels;
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.data() + cinfo.output_scanline * row_bytes;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

void check_magnitude(OutputKind kind, double magnitude) {
    require(std::isfinite(magnitude), "output_perturb: magnitude must be finite");
    switch (kind) {
        case OutputKind::a:
            require(magnitude >= 0, "output_perturb: noise sigma must be >= 0");
            break;
        case OutputKind::b:
        case OutputKind::c:
            require(magnitude >= 0 && magnitude <= 16, "output_perturb: kernel sigma must be in [0,16]");
            break;
        case OutputKind::d:
            require(magnitude > 0 && magnitude <= 1, "output_perturb: JPEG quality must be in (0,1]");
            break;
    }
}

}  // namespace

// ---------------------------------------------------------------- names

std::string to_string(AttackKind kind) { return kAttackNames[static_cast<int>(kind)]; }

AttackKind parse_attack_kind(const std::string& text) {
    for (int i = 0; i < 8; ++i)
        if (text == kAttackNames[i]) return static_cast<AttackKind>(i);
    throw PreconditionError("unknown attack kind: " + text);
}

std::string to_string(Base base) { return base == Base::PS ? "PS" : "ME"; }

Base parse_base(const std::string& text) {
    if (text == "PS") return Base::PS;
    if (text == "ME") return Base::ME;
    throw PreconditionError("unknown attack base: " + text);
}

std::string to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::I: return "I";
        case Strategy::II: return "II";
        case Strategy::III: return "III";
    }
    return "?";
}

Strategy parse_strategy(const std::string& text) {
    if (text == "I") return Strategy::I;
    if (text == "II") return Strategy::II;
    if (text == "III") return Strategy::III;
    throw PreconditionError("unknown adaptive strategy: " + text);
}

char to_char(OutputKind kind) { return static_cast<char>('a' + static_cast<int>(kind)); }

OutputKind parse_output_kind(const std::string& text) {
    if (text.size() == 1 && text[0] >= 'a' && text[0] <= 'd') return static_cast<OutputKind>(text[0] - 'a');
    throw PreconditionError("unknown output perturbation kind: " + text);
}

std::array<double, 4> strategy_magnitudes(Strategy strategy) {
    switch (strategy) {
        case Strategy::I: return {0.001, 0.1, 0.1, 0.95};
        case Strategy::II: return {0.005, 0.2, 0.3, 0.90};
        case Strategy::III: return {0.01, 0.4, 0.5, 0.85};
    }
    throw PreconditionError("unknown adaptive strategy");
}

// ---------------------------------------------------------------- spec

void AttackSpec::validate() const {
    switch (kind) {
        case AttackKind::oup_a_noise:
        case AttackKind::oup_b_filter:
        case AttackKind::oup_c_blur:
        case AttackKind::oup_d_jpeg:
            require(magnitudes.size() == 1, to_string(kind) + " takes exactly one magnitude");
            check_magnitude(static_cast<OutputKind>(static_cast<int>(kind) - 1), magnitudes[0]);
            break;
        case AttackKind::adaptive_II:
            require(strategy.has_value(), "adaptive_II requires a strategy");
            require(magnitudes.empty(), "adaptive_II magnitudes come from the strategy table");
            break;
        case AttackKind::fine_tune:
            require(magnitudes.size() <= 1 && (magnitudes.empty() || magnitudes[0] >= 0),
                    "fine_tune takes at most one magnitude (training steps >= 0)");
            break;
        case AttackKind::input_perturb:
        case AttackKind::adaptive_I:
            require(magnitudes.empty(), to_string(kind) + " takes no magnitude");
            break;
    }
    require(kind == AttackKind::adaptive_II || !strategy, "only adaptive_II takes a strategy");
}

json AttackSpec::to_json() const {
    json j{{"kind", to_string(kind)}, {"magnitudes", magnitudes}, {"base", to_string(base)}};
    j["strategy"] = strategy ? json(to_string(*strategy)) : json(nullptr);
    return j;
}

AttackSpec AttackSpec::from_json(const json& j) {
    AttackSpec s;
    s.kind = parse_attack_kind(j.at("kind").get<std::string>());
    s.magnitudes = j.value("magnitudes", std::vector<double>{});
    s.base = parse_base(j.value("base", std::string("PS")));
    if (j.contains("strategy") && !j.at("strategy").is_null())
        s.strategy = parse_strategy(j.at("strategy").get<std::string>());
    s.validate();
    return s;
}

// ---------------------------------------------------------------- perturbations

data::ImageBatch input_perturb(const zoo::GeneratorModel& model, int count, std::uint64_t seed) {
    require(model.trained_steps() > 0, "input_perturb: model is untrained");
    return zoo::sample(model, data::sample_prior(count, model.latent_dim(), seed)).tagged("Inp");
}

std::vector<double> gaussian_taps(double sigma) {
    require(sigma >= 0, "gaussian_taps: sigma must be >= 0");
    if (sigma == 0) return {1.0};
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int k = -r; k <= r; ++k) sum += taps[static_cast<std::size_t>(k + r)] = std::exp(-k * k / (2 * sigma * sigma));
    for (double& t : taps) t /= sum;
    return taps;
}

std::vector<std::uint8_t> encode_jpeg(const data::ImageBatch& images, int index, int quality) {
    require(quality >= 1 && quality <= 100, "encode_jpeg: quality must be in [1,100]");
    return jpeg_encode(images.image_bytes(index).data(), images.size(), images.channels(), quality);
}

data::ImageBatch jpeg_round_trip(const data::ImageBatch& images, int quality) {
    require(quality >= 1 && quality <= 100, "jpeg_round_trip: quality must be in [1,100]");
    const int size = images.size(), channels = images.channels();
    nn::Tensor out(images.count(), channels, size, size);
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (int i = 0; i < images.count(); ++i) {
        const auto decoded = jpeg_decode(jpeg_encode(images.image_bytes(i).data(), size, channels, quality), size,
                                         channels);
        float* dst = out.sample(i);
        for (std::size_t p = 0; p < plane; ++p)
            for (int c = 0; c < channels; ++c) dst[c * plane + p] = decoded[p * channels + c] / 255.0f;
    }
    return data::ImageBatch(std::move(out), images.provenance());
}

data::ImageBatch output_perturb(const data::ImageBatch& images, OutputKind kind, double magnitude,
                                std::uint64_t noise_seed) {
    check_magnitude(kind, magnitude);
    require(images.count() >= 1, "output_perturb: empty batch");
    nn::Tensor out;
    switch (kind) {
        case OutputKind::a: {
            out = images.pixels();
            if (magnitude > 0) {
                std::mt19937_64 rng(noise_seed);
                std::normal_distribution<double> normal(0.0, magnitude);
                for (float& v : out.values()) v = static_cast<float>(v + normal(rng));
            }
            break;
        }
        case OutputKind::b:
            out = convolve(images.pixels(), gaussian_taps(magnitude), Border::renormalize);
            break;
        case OutputKind::c:
            out = convolve(images.pixels(), gaussian_taps(magnitude), Border::reflect);
            break;
        case OutputKind::d:
            out = jpeg_round_trip(images, static_cast<int>(std::lround(magnitude * 100.0))).pixels();
            break;
    }
    clamp_unit(out);
    return data::ImageBatch(std::move(out), data::append_tag(images.provenance(),
                                                             std::string("Oup-") + to_char(kind) + ":" +
                                                                 format_magnitude(magnitude)));
}

data::ImageBatch adaptive_attack_II(const data::ImageBatch& images, Strategy strategy, std::uint64_t noise_seed) {
    const auto mags = strategy_magnitudes(strategy);
    data::ImageBatch x = images;
    for (int k = 0; k < 4; ++k) x = output_perturb(x, static_cast<OutputKind>(k), mags[static_cast<std::size_t>(k)], noise_seed);
    return x.tagged("AdaII-" + to_string(strategy));
}

// ---------------------------------------------------------------- fine-tuning

zoo::GeneratorModel fine_tune(const zoo::GeneratorModel& stolen, const data::ImageBatch& new_data,
                              const zoo::TrainConfig& config, const data::ImageBatch* original_data) {
    require(stolen.trained_steps() > 0, "fine_tune: model is untrained");
    require(config.steps >= 0, "fine_tune: steps must be >= 0");
    require(new_data.provenance() != stolen.lineage().train_data_ref,
            "fine_tune: new data is the stolen model's training data");
    if (original_data) {
        std::set<std::string> seen;
        for (int i = 0; i < original_data->count(); ++i) seen.insert(original_data->image_hash(i));
        for (int i = 0; i < new_data.count(); ++i)
            require(!seen.contains(new_data.image_hash(i)), "fine_tune: new data overlaps the original training data");
    }

    const zoo::Lineage parent = stolen.lineage();
    zoo::GeneratorModel tuned = stolen;
    if (config.steps > 0) tuned = zoo::continue_training(stolen, new_data, config).model;

    zoo::Lineage lin = tuned.lineage();
    lin.id = zoo::to_string(stolen.arch()) + "-" +
             sha256_hex(parent.id + "fine_tune" + new_data.content_hash() + config.hash()).substr(0, 12);
    lin.role = zoo::Role::suspect;
    lin.parent_id = parent.id;
    lin.generation_index = parent.generation_index + 1;
    lin.train_seed = config.seed;
    lin.train_data_ref = parent.train_data_ref + "|" + new_data.provenance();
    lin.derivation = "fine_tune";
    lin.ancestry = parent.ancestry;
    lin.ancestry.push_back(parent.id);
    lin.ancestry_arch = parent.ancestry_arch;
    lin.ancestry_arch.push_back(zoo::to_string(stolen.arch()));
    zoo::validate_lineage(lin);
    tuned.lineage() = lin;
    return tuned;
}

// ---------------------------------------------------------------- adaptive I

std::vector<SnapshotPoint> adaptive_attack_I(const std::vector<zoo::Checkpoint>& snapshots,
                                             const zoo::GeneratorModel& victim,
                                             const protection::ProtectionClassifier& clf,
                                             const metrics::FeatureExtractor& extractor, double tau, int m,
                                             int fid_samples, std::uint64_t sample_seed) {
    require(!snapshots.empty(), "adaptive_attack_I: no snapshots");
    require(fid_samples >= 2, "adaptive_attack_I: FID needs at least 2 samples per side");
    const int latent = victim.latent_dim();
    const FeatureMatrix victim_features =
        extractor.features(zoo::sample(victim, data::sample_prior(fid_samples, latent, mix64(sample_seed ^ 1))));
    std::vector<SnapshotPoint> curve;
    for (const auto& snap : snapshots) {
        const int count = std::max(m, fid_samples);
        const data::ImageBatch x = zoo::sample(snap.model, data::sample_prior(count, latent, mix64(sample_seed ^ 2)));
        SnapshotPoint p;
        p.step = snap.step;
        p.fidelity = metrics::fid_from_features(extractor.features(x.slice(0, fid_samples)), victim_features,
                                                extractor.id());
        p.report = protection::perform_verification(clf, x, tau, m,
                                                    snap.model.lineage().id + "@" + std::to_string(snap.step));
        curve.push_back(std::move(p));
    }
    return curve;
}

// ---------------------------------------------------------------- overwrite

json OverwriteRecord::to_json() const { return json{{"applicable", applicable}, {"reason", reason}}; }

OverwriteRecord overwrite_attack() {
    return OverwriteRecord{false,
                           "verification reads only generated samples; no watermark or fingerprint is embedded "
                           "in the model, so there is nothing to overwrite"};
}

}  // namespace ganguards::obfuscation
