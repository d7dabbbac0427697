// Acceptance suite: one PASS/FAIL line per criterion. Experiment criteria run
// the configs in tests/acceptance/configs through the harness, reusing the
// artifact cache (GANGUARDS_CACHE, else <work>/cache).

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ganguards/error.hpp"
#include "ganguards/harness.hpp"
#include "ganguards/metrics.hpp"
#include "ganguards/obfuscation.hpp"
#include "ganguards/protection.hpp"

using namespace ganguards;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path configs;
    fs::path work;
    std::map<std::string, harness::ExperimentRecord> records;

    fs::path cache_root() const {
        const char* env = std::getenv("GANGUARDS_CACHE");
        return env && *env ? fs::path(env) : work / "cache";
    }

    const harness::ExperimentRecord& record(const std::string& kind) {
        if (auto it = records.find(kind); it != records.end()) return it->second;
        const auto config = harness::ExperimentConfig::load(configs / (kind + ".json"));
        harness::ArtifactCache cache(cache_root());
        fs::create_directories(work);
        std::ofstream log(work / (kind + ".acceptance.log"));
        return records[kind] = harness::run_experiment(config, work / kind, cache, &log);
    }
};

std::string fmt(double v, int digits = 3) {
    std::ostringstream s;
    s << std::setprecision(digits) << std::fixed << v;
    return s.str();
}

const json* summary_row(const harness::ExperimentRecord& r, const std::string& name) {
    for (const auto& row : r.summary.at("suspects"))
        if (row.at("name") == name) return &row;
    return nullptr;
}

// Every listed suspect must get its expected decision in at least 2 of its trials.
Outcome two_of_three(const harness::ExperimentRecord& r, const std::vector<std::pair<std::string, bool>>& expected) {
    Outcome o{true, ""};
    for (const auto& [name, stolen] : expected) {
        const json* row = summary_row(r, name);
        if (!row) {
            o.pass = false;
            o.detail += name + "=missing ";
            continue;
        }
        const bool label_ok = (row->at("expected") == "stolen") == stolen;
        const int correct = row->at("correct");
        const int trials = row->at("trials");
        o.pass = o.pass && label_ok && trials >= 3 && correct >= 2;
        std::string confs;
        for (const auto& c : row->at("confidences")) confs += (confs.empty() ? "" : "/") + fmt(c.get<double>(), 3);
        o.detail += name + "[" + (stolen ? "stolen" : "honest") + " " + std::to_string(correct) + "/" +
                    std::to_string(trials) + " conf " + confs + "] ";
    }
    return o;
}

// ---------------------------------------------------------------- criteria

Outcome decision_rule(Context&) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<int> len(1, 64);
    std::uniform_real_distribution<double> tau_dist(0.0, 1.0);
    int mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        const int n = len(rng);
        const std::uint64_t word = rng();
        std::vector<std::uint8_t> bits(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) bits[static_cast<std::size_t>(k)] = (word >> k) & 1U;
        const std::uint64_t mask = n == 64 ? ~0ULL : ((1ULL << n) - 1);
        const double oracle = static_cast<double>(std::popcount(word & mask)) / n;
        const double conf = protection::confidence_score(bits);
        const double tau = tau_dist(rng);
        if (conf != oracle || protection::ownership_decision(conf, tau) != (oracle > tau ? 1 : 0)) ++mismatches;
    }
    // confidence exactly at tau: 9 of 10 positives against 0.9
    std::vector<std::uint8_t> tie(10, 1);
    tie[0] = 0;
    const bool tie_honest = protection::ownership_decision(protection::confidence_score(tie), 0.9) == 0;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {mismatches == 0 && tie_honest && secs < 1.0,
            std::to_string(mismatches) + " mismatches over 1000 vectors, tie decides " +
                (tie_honest ? "honest" : "stolen") + ", " + fmt(secs, 4) + " s"};
}

Outcome verification(Context& ctx) {
    const auto& r = ctx.record("verification");
    Outcome o = two_of_three(r, {{"PS", true}, {"ME", true}, {"Ind-a", false}, {"Ind-b", false}});
    o.detail += "wall " + fmt(r.wall_time_s / 60.0, 1) + " min";
    return o;
}

Outcome obfuscation_robustness(Context& ctx) {
    const auto& r = ctx.record("obfuscation_sweep");
    std::vector<std::pair<std::string, bool>> expected{{"PS+Inp", true}};
    const char* oup[] = {"a:0.01", "b:0.4", "c:0.5", "d:0.85"};
    for (const std::string base : {"PS", "ME"})
        for (const char* o : oup) expected.emplace_back(base + "+Oup-" + o, true);
    int fine_tuned = 0;
    for (const auto& row : r.summary.at("suspects")) {
        const std::string name = row.at("name");
        if (name.find("+FT:") != std::string::npos) {
            expected.emplace_back(name, false);
            ++fine_tuned;
        }
    }
    Outcome o = two_of_three(r, expected);
    if (fine_tuned == 0) {
        o.pass = false;
        o.detail += "no fine-tuned suspects";
    }
    return o;
}

double max_abs_diff(const data::ImageBatch& a, const data::ImageBatch& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i)
        worst = std::max(worst, static_cast<double>(std::abs(a.pixels().data()[i] - b.pixels().data()[i])));
    return worst;
}

int mirror(int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

// Direct 2-D convolution, mirrored border for kind c, kernel mass renormalized
// inside the image for kind b.
double blur_oracle(const data::ImageBatch& img, int n, int c, int y, int x, double sigma, bool renormalize) {
    const int r = static_cast<int>(std::ceil(3 * sigma));
    const int s = img.size();
    double acc = 0, mass = 0, full = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double k = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            full += k;
            int yy = y + dy, xx = x + dx;
            if (renormalize && (yy < 0 || yy >= s || xx < 0 || xx >= s)) continue;
            acc += k * img.pixels().at(n, c, mirror(yy, s), mirror(xx, s));
            mass += k;
        }
    return std::clamp(acc / (renormalize ? mass : full), 0.0, 1.0);
}

data::ImageBatch random_images(int count, int size, std::uint64_t seed) {
    nn::Tensor t(count, 3, size, size);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : t.values()) v = u(rng);
    return {std::move(t), "acceptance/random"};
}

Outcome perturbation_math(Context&) {
    using obfuscation::OutputKind;
    const auto img = random_images(4, 32, 7);
    double blur_err = 0;
    for (double sigma : {0.4, 0.5, 1.0})
        for (auto kind : {OutputKind::b, OutputKind::c}) {
            const auto out = obfuscation::output_perturb(img, kind, sigma);
            for (int n = 0; n < img.count(); ++n)
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < 32; ++y)
                        for (int x = 0; x < 32; ++x)
                            blur_err = std::max(blur_err, std::abs(out.pixels().at(n, c, y, x) -
                                                                   blur_oracle(img, n, c, y, x, sigma, kind == OutputKind::b)));
        }
    // Identity settings on 8-bit content, as generators and the JPEG path see it.
    nn::Tensor quantized = img.pixels();
    for (float& v : quantized.values()) v = std::round(v * 255.0f) / 255.0f;
    const data::ImageBatch x(std::move(quantized), "acceptance/8bit");
    double ident = 0;
    ident = std::max(ident, max_abs_diff(x, obfuscation::output_perturb(x, OutputKind::a, 0.0, 1)));
    ident = std::max(ident, max_abs_diff(x, obfuscation::output_perturb(x, OutputKind::b, 0.0)));
    ident = std::max(ident, max_abs_diff(x, obfuscation::output_perturb(x, OutputKind::c, 0.0)));
    const double jpeg100 = max_abs_diff(x, obfuscation::output_perturb(x, OutputKind::d, 1.0));
    ident = std::max(ident, jpeg100);

    const auto bytes = obfuscation::encode_jpeg(x, 0, 85);
    const bool soi = bytes.size() > 4 && bytes[0] == 0xFF && bytes[1] == 0xD8;
    const bool eoi = bytes.size() > 4 && bytes[bytes.size() - 2] == 0xFF && bytes.back() == 0xD9;
    bool sof0 = false;
    for (std::size_t i = 0; i + 1 < bytes.size(); ++i)
        if (bytes[i] == 0xFF && bytes[i + 1] == 0xC0) sof0 = true;

    const bool pass = blur_err <= 1e-6 && ident <= 1.0 / 255.0 + 1e-7 && soi && sof0 && eoi;
    return {pass, "blur max err " + fmt(blur_err * 1e6, 3) + "e-6, identity max err " + fmt(ident * 255.0, 3) +
                      "/255 (jpeg q100 " + fmt(jpeg100 * 255.0, 3) + "/255), bitstream SOI/SOF0/EOI " +
                      (soi && sof0 && eoi ? "ok" : "missing")};
}

Outcome fid_properties(Context& ctx) {
    // 1-D closed form: means 0 and 3, equal variance -> 9.
    std::vector<double> mu_a{0.0}, mu_b{3.0}, cov{2.0};
    const double closed = metrics::frechet_distance(mu_a, cov, mu_b, cov, 1);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d(0, 1);
    FeatureMatrix a(600, 6), b(600, 6);
    for (double& v : a.values) v = d(rng);
    for (double& v : b.values) v = 0.5 + 1.3 * d(rng);
    const double self = metrics::frechet_distance(a, a);
    const double asym = std::abs(metrics::frechet_distance(a, b) - metrics::frechet_distance(b, a));

    metrics::FamilyFeatureExtractor::Options eo;
    eo.image_size = 32;
    const auto ex = metrics::FamilyFeatureExtractor::cached(ctx.cache_root() / "extractors", eo);
    const auto images = data::make_procedural_dataset({"blobs", 32, 3}, 600, 99);
    bool monotone = true;
    double last = -1;
    std::string grid;
    for (double sigma : {0.0, 0.01, 0.05, 0.1}) {
        const double v = metrics::fid(images, obfuscation::output_perturb(images, obfuscation::OutputKind::a, sigma, 3), ex).value;
        monotone = monotone && v >= last;
        last = v;
        grid += (grid.empty() ? "" : " ") + fmt(v, 4);
    }
    const double image_self = metrics::fid(images, images, ex).value;
    const bool pass = self <= 1e-6 && image_self <= 1e-6 && std::abs(closed - 9.0) <= 1e-9 && monotone && asym <= 1e-6;
    return {pass, "self " + fmt(std::max(self, image_self), 9) + ", closed form " + fmt(closed, 12) + ", noise grid [" +
                      grid + "], asymmetry " + fmt(asym, 9)};
}

Outcome ssim_properties(Context& ctx) {
    const auto a = random_images(100, 32, 11), b = random_images(100, 32, 12);
    double ident = 0, asym = 0;
    for (int i = 0; i < 100; ++i) {
        ident = std::max(ident, std::abs(metrics::ssim(a, i, a, i) - 1.0));
        asym = std::max(asym, std::abs(metrics::ssim(a, i, b, i) - metrics::ssim(b, i, a, i)));
    }
    const double c1 = 0.01 * 0.01;
    double closed = 0;
    for (auto [p, q] : {std::pair{0.2f, 0.6f}, std::pair{0.0f, 1.0f}, std::pair{0.7f, 0.3f}}) {
        const data::ImageBatch x(nn::Tensor(1, 3, 32, 32, p), "c"), y(nn::Tensor(1, 3, 32, 32, q), "c");
        const double expected = (2.0 * p * q + c1) / (static_cast<double>(p) * p + static_cast<double>(q) * q + c1);
        closed = std::max(closed, std::abs(metrics::ssim(x, 0, y, 0) - expected));
    }
    // Ledger from the adaptive-II experiment: mean SSIM per strategy over bases and trials.
    const auto& r = ctx.record("adaptive_II");
    std::map<std::string, std::pair<double, int>> per;
    for (const auto& t : r.trials)
        for (const auto& row : t.tables.at("adaptive_II")) {
            auto& acc = per[row.at("strategy").get<std::string>()];
            acc.first += row.at("mean_ssim").get<double>();
            ++acc.second;
        }
    bool decreasing = per.size() == 3;
    double last = 2.0;
    std::string ledger;
    for (const std::string s : {"I", "II", "III"}) {
        if (!per.contains(s)) {
            decreasing = false;
            continue;
        }
        const double mean = per[s].first / per[s].second;
        decreasing = decreasing && mean < last;
        last = mean;
        ledger += (ledger.empty() ? "" : " > ") + s + ":" + fmt(mean, 4);
    }
    const bool pass = ident <= 1e-9 && asym <= 1e-12 && closed <= 1e-9 && decreasing;
    return {pass, "identity err " + fmt(ident, 12) + ", asymmetry " + fmt(asym, 12) + ", closed form err " +
                      fmt(closed, 12) + ", ledger " + ledger};
}

Outcome generations(Context& ctx) {
    const auto& r = ctx.record("generations");
    int all_stolen = 0;
    bool tables = true;
    std::string detail;
    for (const auto& t : r.trials) {
        const auto& rows = t.tables.contains("generations") ? t.tables.at("generations") : json::array();
        tables = tables && rows.size() == 3;
        bool ok = rows.size() == 3;
        std::string confs;
        for (const auto& row : rows) {
            ok = ok && row.at("decision").get<int>() == 1;
            confs += (confs.empty() ? "" : "/") + fmt(row.at("confidence").get<double>(), 3);
        }
        all_stolen += ok ? 1 : 0;
        detail += "seed " + std::to_string(t.seed) + " [" + confs + "] ";
    }
    return {tables && r.trials.size() >= 3 && all_stolen >= 2,
            std::to_string(all_stolen) + "/" + std::to_string(r.trials.size()) +
                " trials stolen at every generation; " + detail};
}

Outcome sample_count(Context& ctx) {
    const auto& r = ctx.record("sample_count_sweep");
    bool pass = !r.trials.empty();
    std::string detail;
    for (const auto& t : r.trials) {
        const auto& rows = t.tables.at("sample_count").at("PS");
        double last = std::numeric_limits<double>::infinity();
        detail += "PS std";
        for (const auto& row : rows) {
            const double s = row.at("std");
            pass = pass && s <= last + 1e-12;
            last = s;
            detail += " m" + std::to_string(row.at("m").get<int>()) + ":" + fmt(s, 4);
        }
        if (t.tables.at("sample_count").contains("Ind-a")) {
            detail += "; Ind-a std";
            for (const auto& row : t.tables.at("sample_count").at("Ind-a"))
                detail += " " + fmt(row.at("std").get<double>(), 4);
        }
    }
    return {pass, detail};
}

Outcome determinism(Context& ctx) {
    const auto& first = ctx.record("verification");
    const fs::path dir = ctx.work / "determinism";
    fs::remove_all(dir);
    const auto config = harness::ExperimentConfig::load(ctx.configs / "verification.json");
    harness::ArtifactCache fresh(dir / "cache");
    std::ofstream log(ctx.work / "determinism.acceptance.log");
    const auto second = harness::run_experiment(config, dir / "out", fresh, &log);
    int reports = 0, differing = 0;
    bool same_shape = first.trials.size() == second.trials.size();
    for (std::size_t t = 0; same_shape && t < first.trials.size(); ++t) {
        const auto& a = first.trials[t].reports;
        const auto& b = second.trials[t].reports;
        same_shape = a.size() == b.size();
        for (std::size_t i = 0; same_shape && i < a.size(); ++i) {
            ++reports;
            if (a[i].to_json(false).dump() != b[i].to_json(false).dump()) ++differing;
        }
    }
    return {same_shape && reports > 0 && differing == 0 && fresh.hits() == 0,
            std::to_string(reports - differing) + "/" + std::to_string(reports) +
                " reports byte-identical against a second run in a fresh cache (" + std::to_string(fresh.builds()) +
                " artifacts rebuilt)"};
}

Outcome cross_arch(Context& ctx) {
    const auto& r = ctx.record("cross_arch_extraction");
    return two_of_three(r, {{"ME[gan-a]", true}, {"ME[gan-b]", true}, {"ME[gan-c]", true}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ganguards acceptance suite"};
    Context ctx;
    std::string configs = GANGUARDS_ACCEPTANCE_CONFIGS;
    std::string work = "acceptance";
    std::vector<int> only;
    app.add_option("--configs", configs, "Directory of experiment configs");
    app.add_option("--work", work, "Output directory for experiment runs");
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    ctx.configs = configs;
    ctx.work = work;

    const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
        {"decision rule matches popcount oracle", decision_rule},
        {"verification suite PS/ME stolen, Ind-a/Ind-b honest", verification},
        {"obfuscation robustness", obfuscation_robustness},
        {"perturbation math", perturbation_math},
        {"FID properties", fid_properties},
        {"SSIM properties and adaptive-II ledger", ssim_properties},
        {"3-generation extraction chain", generations},
        {"sample-count stability", sample_count},
        {"determinism of verification reports", determinism},
        {"cross-architecture extraction", cross_arch},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << "criterion " << std::setw(2) << id << " " << (o.pass ? "PASS" : "FAIL") << "  "
                  << criteria[i].first << ": " << o.detail << " (" << fmt(secs, 1) << " s)" << std::endl;
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
