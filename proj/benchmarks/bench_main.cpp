#include <random>

#include <benchmark/benchmark.h>

#include "ganguards/data.hpp"
#include "ganguards/gan.hpp"
#include "ganguards/metrics.hpp"
#include "ganguards/nn.hpp"
#include "ganguards/obfuscation.hpp"
#include "ganguards/protection.hpp"

using namespace ganguards;

namespace {

nn::Tensor noise(int n, int c, int h, int w, std::uint64_t seed) {
    nn::Tensor t(n, c, h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : t.values()) v = u(rng);
    return t;
}

const data::ImageBatch& images() {
    static const auto x = data::make_procedural_dataset({"blobs", 32, 3}, 96, 1);
    return x;
}

}  // namespace

static void BM_Conv2dForwardBackward(benchmark::State& state) {
    std::mt19937_64 rng(1);
    const int channels = static_cast<int>(state.range(0));
    nn::Conv2d conv(channels, channels, 3, 1, 1, rng);
    const nn::Tensor x = noise(32, channels, 16, 16, 2);
    for (auto _ : state) {
        const nn::Tensor y = conv.forward(x);
        benchmark::DoNotOptimize(conv.backward(y).data());
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(64);

static void BM_GanStep(benchmark::State& state) {
    zoo::TrainConfig cfg;
    cfg.steps = 4;
    cfg.batch_size = 32;
    cfg.snapshot_every = 4;
    for (auto _ : state) {
        auto r = zoo::train_gan(images(), static_cast<zoo::ArchId>(state.range(0)), 64, cfg);
        benchmark::DoNotOptimize(r.model.trained_steps());
    }
    state.SetItemsProcessed(state.iterations() * cfg.steps);
}
BENCHMARK(BM_GanStep)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

static void BM_GeneratorSample(benchmark::State& state) {
    const zoo::GeneratorModel g(zoo::ArchId::gan_a, 64, 32, 3, 1);
    const auto z = data::sample_prior(256, 64, 3);
    for (auto _ : state) benchmark::DoNotOptimize(zoo::sample(g, z).count());
    state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_GeneratorSample)->Unit(benchmark::kMillisecond);

static void BM_FrechetDistance(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    FeatureMatrix a(1000, dim), b(1000, dim);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> d(0, 1);
    for (double& v : a.values) v = d(rng);
    for (double& v : b.values) v = 0.3 + d(rng);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::frechet_distance(a, b));
}
BENCHMARK(BM_FrechetDistance)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_Ssim(benchmark::State& state) {
    const auto& x = images();
    const auto y = obfuscation::output_perturb(x, obfuscation::OutputKind::a, 0.05, 1);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::mean_ssim(x, y));
    state.SetItemsProcessed(state.iterations() * x.count());
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond);

static void BM_JpegRoundTrip(benchmark::State& state) {
    const auto& x = images();
    for (auto _ : state)
        benchmark::DoNotOptimize(obfuscation::jpeg_round_trip(x, static_cast<int>(state.range(0))).count());
    state.SetItemsProcessed(state.iterations() * x.count());
}
BENCHMARK(BM_JpegRoundTrip)->Arg(85)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_GaussianBlur(benchmark::State& state) {
    const auto& x = images();
    for (auto _ : state)
        benchmark::DoNotOptimize(obfuscation::output_perturb(x, obfuscation::OutputKind::c, 0.5).count());
    state.SetItemsProcessed(state.iterations() * x.count());
}
BENCHMARK(BM_GaussianBlur)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
