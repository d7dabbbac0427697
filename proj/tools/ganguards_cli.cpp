// ganguards command line: one subcommand per pipeline stage plus the
// experiment runner. Exit codes: 0 ok, 2 precondition, 3 divergence.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ganguards/data.hpp"
#include "ganguards/error.hpp"
#include "ganguards/extraction.hpp"
#include "ganguards/gan.hpp"
#include "ganguards/harness.hpp"
#include "ganguards/metrics.hpp"
#include "ganguards/obfuscation.hpp"
#include "ganguards/protection.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ganguards;

namespace {

constexpr int kExitPrecondition = 2;
constexpr int kExitDivergence = 3;

struct Common {
    std::uint64_t seed = 0;
    std::string config;
    std::string out = "out";
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "Global seed; every random stream is derived from it");
    app->add_option("--config", c.config, "JSON config document");
    app->add_option("--out", c.out, "Output directory");
}

// Non-experiment subcommands read the same document as `experiment run`
// and take the GAN, classifier, budget, tau and m settings from it.
harness::ExperimentConfig settings(const Common& c) {
    if (c.config.empty()) return {};
    std::ifstream in(c.config);
    require(static_cast<bool>(in), "cannot open config " + c.config);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw PreconditionError("malformed config " + c.config + ": " + e.what());
    }
    if (!j.contains("kind")) j["kind"] = "verification";
    return harness::ExperimentConfig::from_json(j);
}

void write_json(const fs::path& file, const json& j) {
    fs::create_directories(file.parent_path());
    std::ofstream out(file);
    require(static_cast<bool>(out), "cannot write " + file.string());
    out << j.dump(2) << '\n';
}

// Adds or replaces the entry called `name` in <dir>/manifest.json.
void record(const fs::path& dir, const std::string& name, json entry) {
    const fs::path file = dir / "manifest.json";
    json list = json::array();
    if (fs::exists(file)) {
        std::ifstream in(file);
        list = json::parse(in, nullptr, false);
        if (!list.is_array()) list = json::array();
    }
    entry["name"] = name;
    for (auto it = list.begin(); it != list.end();)
        it = it->value("name", "") == name ? list.erase(it) : it + 1;
    list.push_back(std::move(entry));
    write_json(file, list);
}

json model_entry(const zoo::GeneratorModel& m, const std::string& path) {
    return {{"path", path},
            {"id", m.lineage().id},
            {"role", zoo::to_string(m.lineage().role)},
            {"arch", zoo::to_string(m.arch())},
            {"weights_hash", m.weights_hash()}};
}

void save_named_model(const zoo::GeneratorModel& m, const fs::path& out, const std::string& name) {
    zoo::save_model(m, out / "models" / name);
    record(out / "models", name, model_entry(m, name));
}

void require_dir(const std::string& path, const std::string& what) {
    require(!path.empty(), what + " path is required");
    require(fs::exists(path), what + " not found: " + path);
}

data::ImageBatch load_part(const std::string& dir, const std::string& part) {
    require_dir(dir, "dataset");
    const auto split = data::load_split(dir);
    if (part == "I") return split.part_I;
    if (part == "II") return split.part_II;
    if (part == "III") return split.part_III;
    throw PreconditionError("unknown dataset part: " + part + " (expected I, II or III)");
}

// Samples come either from an image folder or are drawn from a model.
data::ImageBatch suspect_samples(const std::string& samples_dir, const std::string& model_dir, int count,
                                 std::uint64_t seed) {
    require(samples_dir.empty() != model_dir.empty(), "give exactly one of --samples or --model");
    if (!samples_dir.empty()) {
        require_dir(samples_dir, "samples");
        return data::load_image_folder(samples_dir);
    }
    require_dir(model_dir, "model");
    const auto model = zoo::load_model(model_dir);
    return zoo::sample(model, data::sample_prior(count, model.latent_dim(), seed));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ownership protection for GAN generators"};
    app.require_subcommand(1);
    Common common;

    // make-data
    auto* make_data = app.add_subcommand("make-data", "Generate a procedural dataset and its three-way split");
    add_common(make_data, common);
    std::string family;
    int count = -1, size = -1;
    make_data->add_option("--family", family, "blobs | rings | stripes");
    make_data->add_option("--count", count);
    make_data->add_option("--size", size);

    // train-gan
    auto* train = app.add_subcommand("train-gan", "Train a generator on one part of a split");
    add_common(train, common);
    std::string data_dir, part = "I", arch = "gan-a", name, role = "target";
    int steps = -1;
    train->add_option("--data", data_dir, "Split directory from make-data")->required();
    train->add_option("--part", part, "I | II | III");
    train->add_option("--arch", arch);
    train->add_option("--steps", steps);
    train->add_option("--name", name, "Model directory name under <out>/models");
    train->add_option("--role", role, "target | independent");

    // extract
    auto* extract = app.add_subcommand("extract", "Model extraction from a victim generator's samples");
    add_common(extract, common);
    std::string victim_dir;
    int budget = -1;
    extract->add_option("--victim", victim_dir)->required();
    extract->add_option("--arch", arch);
    extract->add_option("--budget", budget, "Number of victim queries");
    extract->add_option("--steps", steps);
    extract->add_option("--name", name);

    // chain
    auto* chain = app.add_subcommand("chain", "Repeated extraction over several generations");
    add_common(chain, common);
    int generations = 3;
    chain->add_option("--root", victim_dir)->required();
    chain->add_option("--generations", generations);
    chain->add_option("--arch", arch);
    chain->add_option("--budget", budget);
    chain->add_option("--steps", steps);

    // build-protection
    auto* build = app.add_subcommand("build-protection", "Train the protection classifier for a target");
    add_common(build, common);
    std::string target_dir;
    int per_class = -1;
    build->add_option("--target", target_dir)->required();
    build->add_option("--data", data_dir, "Split directory; part III trains the independent model")->required();
    build->add_option("--n", per_class, "Positives per positive class");
    build->add_option("--budget", budget);
    build->add_option("--steps", steps);
    build->add_option("--name", name);

    // verify
    auto* verify = app.add_subcommand("verify", "Decide whether a suspect is derived from the target");
    add_common(verify, common);
    std::string classifier_dir, samples_dir, model_dir;
    double tau = -1;
    int m = -1;
    verify->add_option("--classifier", classifier_dir)->required();
    verify->add_option("--samples", samples_dir, "PNG folder of suspect samples");
    verify->add_option("--model", model_dir, "Suspect model to sample from");
    verify->add_option("--tau", tau);
    verify->add_option("--m", m);
    verify->add_option("--name", name);

    // attack
    auto* attack = app.add_subcommand("attack", "Apply an obfuscation to a stolen model or its samples");
    add_common(attack, common);
    std::string kind_text, strategy = "I";
    double magnitude = -1;
    attack->add_option("--model", model_dir)->required();
    attack->add_option("--kind", kind_text,
                       "input_perturb | oup_a_noise | oup_b_filter | oup_c_blur | oup_d_jpeg | fine_tune | adaptive_II")
        ->required();
    attack->add_option("--magnitude", magnitude);
    attack->add_option("--strategy", strategy, "I | II | III for adaptive_II");
    attack->add_option("--count", count, "Samples to write");
    attack->add_option("--data", data_dir, "Split directory; part II is the fine-tuning data");
    attack->add_option("--name", name);

    // metrics
    auto* metric_cmd = app.add_subcommand("metrics", "FID or mean SSIM between two sample sets");
    add_common(metric_cmd, common);
    std::string metric = "fid", a_dir, b_dir;
    metric_cmd->add_option("--metric", metric, "fid | ssim");
    metric_cmd->add_option("--a", a_dir, "PNG folder or model directory")->required();
    metric_cmd->add_option("--b", b_dir, "PNG folder or model directory")->required();
    metric_cmd->add_option("--count", count, "Samples drawn when an input is a model");
    metric_cmd->add_option("--name", name);

    // experiment run
    auto* experiment = app.add_subcommand("experiment", "Experiment runner");
    experiment->require_subcommand(1);
    auto* run = experiment->add_subcommand("run", "Run an experiment config end to end");
    add_common(run, common);

    // plot
    auto* plot = app.add_subcommand("plot", "Re-render figures from a persisted experiment record");
    add_common(plot, common);
    std::string record_dir;
    plot->add_option("--record", record_dir, "Experiment output directory (defaults to --out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitPrecondition;
    }

    try {
        const fs::path out = common.out;
        const auto cfg = settings(common);
        data::SeedPolicy seeds(common.seed);
        auto gan_cfg = [&](const std::string& label) {
            zoo::TrainConfig t = cfg.gan;
            if (steps >= 0) t.steps = steps;
            if (t.snapshot_every > t.steps || t.steps % t.snapshot_every != 0) t.snapshot_every = t.steps;
            t.seed = seeds.stream(label);
            return t;
        };
        if (budget < 0) budget = cfg.budgets.query_budget;
        if (tau < 0) tau = cfg.tau;
        if (m < 0) m = cfg.m;

        if (make_data->parsed()) {
            if (family.empty()) family = cfg.dataset.family;
            if (count < 0) count = cfg.dataset.count;
            if (size < 0) size = cfg.dataset.size;
            const auto batch = data::make_procedural_dataset({family, size, cfg.dataset.channels}, count,
                                                             seeds.stream("data"));
            const auto split = data::split_three_way(batch, seeds.stream("split"));
            data::save_split(split, out / "data");
            std::cout << "wrote " << count << " images to " << (out / "data").string() << '\n';
        } else if (train->parsed()) {
            const auto images = load_part(data_dir, part);
            auto result = zoo::train_gan(images, zoo::parse_arch(arch), cfg.latent_dim, gan_cfg("train"));
            result.model.lineage().role = zoo::parse_role(role);
            if (name.empty()) name = role;
            save_named_model(result.model, out, name);
            std::cout << "trained " << result.model.lineage().id << " -> " << (out / "models" / name).string() << '\n';
        } else if (extract->parsed()) {
            require_dir(victim_dir, "victim model");
            const auto victim = zoo::load_model(victim_dir);
            auto res = extraction::extract_model(victim, budget, zoo::parse_arch(arch), gan_cfg("extract"),
                                                 seeds.stream("queries"));
            if (name.empty()) name = "ME";
            save_named_model(res.substitute, out, name);
            std::cout << "extracted " << res.substitute.lineage().id << " -> " << (out / "models" / name).string()
                      << '\n';
        } else if (chain->parsed()) {
            require_dir(victim_dir, "root model");
            const auto root = zoo::load_model(victim_dir);
            const auto res = extraction::extraction_chain(root, generations, budget, zoo::parse_arch(arch),
                                                          gan_cfg("chain"), seeds.stream("chain"));
            extraction::save_chain(root, res, out / "models" / "chain");
            record(out / "models", "chain",
                   {{"path", "chain"}, {"generations", res.models.size()}, {"aborted", res.aborted.value_or("")}});
            if (res.aborted) {
                std::cerr << "chain aborted: " << *res.aborted << '\n';
                return kExitDivergence;
            }
            std::cout << "chain of " << res.models.size() << " generations -> " << (out / "models" / "chain").string()
                      << '\n';
        } else if (build->parsed()) {
            require_dir(target_dir, "target model");
            const auto target = zoo::load_model(target_dir);
            const auto split = [&] {
                require_dir(data_dir, "dataset");
                return data::load_split(data_dir);
            }();
            protection::ProtectionConfig pc;
            pc.budgets = cfg.budgets;
            pc.budgets.query_budget = budget;
            if (per_class > 0) pc.budgets.per_class = per_class;
            pc.extraction_training = gan_cfg("defender/extraction");
            pc.independent_training = gan_cfg("defender/independent");
            pc.classifier = cfg.classifier;
            pc.classifier.seed = seeds.stream("defender/classifier");
            pc.extraction_query_seed = seeds.stream("defender/queries");
            pc.sample_seed = seeds.stream("defender/samples");
            auto built = protection::build_protection(target, split.part_III, pc, &split.part_I);
            if (name.empty()) name = "protection";
            protection::save_classifier(built.classifier, out / "classifiers" / name);
            record(out / "classifiers", name,
                   {{"path", name},
                    {"manifest_hash", built.classifier.manifest_hash()},
                    {"holdout_accuracy", built.classifier.manifest().holdout_accuracy}});
            save_named_model(built.substitute, out, name + "-substitute");
            save_named_model(built.independent, out, name + "-independent");
            std::cout << "classifier holdout accuracy " << built.classifier.manifest().holdout_accuracy << " -> "
                      << (out / "classifiers" / name).string() << '\n';
        } else if (verify->parsed()) {
            require_dir(classifier_dir, "classifier");
            const auto clf = protection::load_classifier(classifier_dir);
            const auto samples = suspect_samples(samples_dir, model_dir, m, seeds.stream("verify"));
            if (name.empty()) name = fs::path(samples_dir.empty() ? model_dir : samples_dir).filename().string();
            const auto report = protection::perform_verification(clf, samples, tau, m, name);
            const fs::path file = out / "reports" / (name + ".json");
            protection::save_report(report, file);
            record(out / "reports", name,
                   {{"path", name + ".json"},
                    {"confidence", report.confidence_score},
                    {"decision", report.decision ? "stolen" : "honest"}});
            std::cout << "confidence " << report.confidence_score << " decision "
                      << (report.decision ? "stolen" : "honest") << '\n';
        } else if (attack->parsed()) {
            require_dir(model_dir, "model");
            const auto model = zoo::load_model(model_dir);
            const auto kind = obfuscation::parse_attack_kind(kind_text);
            if (name.empty()) name = kind_text;
            auto write_samples = [&](const data::ImageBatch& b) {
                data::write_image_folder(b, out / "samples" / name);
                record(out / "samples", name, {{"path", name}, {"count", b.count()}, {"provenance", b.provenance()}});
                std::cout << "wrote " << b.count() << " samples -> " << (out / "samples" / name).string() << '\n';
            };
            auto clean = [&] {
                return zoo::sample(model, data::sample_prior(count, model.latent_dim(), seeds.stream("clean")));
            };
            const double mag = magnitude;
            switch (kind) {
                case obfuscation::AttackKind::input_perturb:
                    write_samples(obfuscation::input_perturb(model, count, seeds.stream("latents")));
                    break;
                case obfuscation::AttackKind::oup_a_noise:
                case obfuscation::AttackKind::oup_b_filter:
                case obfuscation::AttackKind::oup_c_blur:
                case obfuscation::AttackKind::oup_d_jpeg: {
                    const int k = static_cast<int>(kind) - 1;
                    const double v = mag >= 0 ? mag : obfuscation::kPaperMagnitudes[static_cast<std::size_t>(k)];
                    write_samples(obfuscation::output_perturb(clean(), static_cast<obfuscation::OutputKind>(k), v,
                                                              seeds.stream("noise")));
                    break;
                }
                case obfuscation::AttackKind::adaptive_II:
                    write_samples(obfuscation::adaptive_attack_II(clean(), obfuscation::parse_strategy(strategy),
                                                                  seeds.stream("noise")));
                    break;
                case obfuscation::AttackKind::fine_tune: {
                    const auto split = [&] {
                        require_dir(data_dir, "fine-tuning dataset");
                        return data::load_split(data_dir);
                    }();
                    zoo::TrainConfig t = gan_cfg("fine_tune");
                    if (mag >= 0) t.steps = static_cast<int>(mag);
                    t.snapshot_every = std::max(1, t.steps);
                    save_named_model(obfuscation::fine_tune(model, split.part_II, t, &split.part_I), out, name);
                    std::cout << "fine-tuned -> " << (out / "models" / name).string() << '\n';
                    break;
                }
                case obfuscation::AttackKind::adaptive_I:
                    throw PreconditionError("adaptive_I needs extraction snapshots; use `experiment run`");
            }
        } else if (metric_cmd->parsed()) {
            auto load = [&](const std::string& p, const std::string& label) {
                require_dir(p, "input");
                if (fs::exists(fs::path(p) / "manifest.json") && fs::exists(fs::path(p) / "weights.bin")) {
                    const auto model = zoo::load_model(p);
                    return zoo::sample(model, data::sample_prior(count, model.latent_dim(), seeds.stream(label)));
                }
                return data::load_image_folder(p);
            };
            const auto a = load(a_dir, "a");
            const auto b = load(b_dir, "b");
            json result{{"metric", metric}, {"a", a_dir}, {"b", b_dir}};
            if (metric == "fid") {
                metrics::FamilyFeatureExtractor::Options o;
                o.image_size = a.size();
                o.channels = a.channels();
                const auto extractor =
                    metrics::FamilyFeatureExtractor::cached(harness::cache_root(out) / "extractors", o);
                const auto r = metrics::fid(a, b, extractor);
                if (r.low_sample_warning) std::cerr << "warning: FID on fewer than 500 samples per side\n";
                result["fid"] = r.to_json();
                std::cout << "fid " << r.value << '\n';
            } else if (metric == "ssim") {
                const double s = metrics::mean_ssim(a, b);
                result["mean_ssim"] = s;
                result["ssim_config"] = metrics::SsimConfig{}.to_json();
                std::cout << "mean ssim " << s << '\n';
            } else {
                throw PreconditionError("unknown metric: " + metric);
            }
            if (name.empty()) name = metric;
            write_json(out / "reports" / ("metrics-" + name + ".json"), result);
            record(out / "reports", "metrics-" + name, {{"path", "metrics-" + name + ".json"}});
        } else if (run->parsed()) {
            require(!common.config.empty(), "experiment run needs --config");
            harness::ArtifactCache cache(harness::cache_root(out));
            const auto rec = harness::run_experiment(cfg, out, cache, &std::cout);
            std::cout << "record -> " << (out / "record.json").string() << " (" << cache.builds() << " built, "
                      << cache.hits() << " cached)\n";
            (void)rec;
        } else if (plot->parsed()) {
            const fs::path dir = record_dir.empty() ? out : fs::path(record_dir);
            require_dir(dir.string(), "experiment record");
            const auto rec = harness::load_record(dir);
            for (const auto& f : harness::emit_figures(rec, out)) std::cout << f.string() << '\n';
        }
    } catch (const zoo::DivergenceError& e) {
        std::cerr << "error: training diverged: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical failure: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const PreconditionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitPrecondition;
    } catch (const CorruptionError& e) {
        std::cerr << "error: corrupt artifact: " << e.what() << '\n';
        return kExitPrecondition;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
