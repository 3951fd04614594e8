#include <ATen/Parallel.h>
#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "sketchcolour/config.hpp"
#include "sketchcolour/denoiser.hpp"
#include "sketchcolour/metrics.hpp"
#include "sketchcolour/sketcher.hpp"
#include "sketchcolour/videovae.hpp"

using namespace sketchcolour;

namespace {

DitConfig toy_dit() { return preset_config("toy").dit; }

torch::Tensor latent_for(const DitConfig& c, int64_t channels) {
    return torch::randn({1, channels, c.gridT * c.patchT, c.gridH * c.patchH, c.gridW * c.patchW});
}

void BM_PatchVectors(benchmark::State& state) {
    const auto c = toy_dit();
    const auto x = latent_for(c, 3 * c.latentChannels);
    for (auto _ : state) {
        dit::Grid grid{};
        benchmark::DoNotOptimize(dit::patch_vectors(x, c, &grid));
    }
}
BENCHMARK(BM_PatchVectors);

void BM_DitForward(benchmark::State& state) {
    const auto c = toy_dit();
    torch::manual_seed(0);
    dit::DiffusionTransformer model(c, 3);
    model->eval();
    const auto x = latent_for(c, c.latentChannels);
    const auto t = torch::tensor({500.0});
    torch::NoGradGuard guard;
    for (auto _ : state) {
        benchmark::DoNotOptimize(model->predict(x, x, x, t));
    }
}
BENCHMARK(BM_DitForward)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
    const auto side = state.range(0);
    const VideoTensor a(torch::rand({1, side, side, 3}));
    const VideoTensor b(torch::rand({1, side, side, 3}));
    for (auto _ : state) {
        benchmark::DoNotOptimize(metrics::ssim(a, b));
    }
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(128);

void BM_Sketch(benchmark::State& state) {
    const VideoTensor clip(torch::rand({17, 64, 96, 3}));
    for (auto _ : state) {
        benchmark::DoNotOptimize(sketch::sketch_video(clip, SketchConfig{}));
    }
}
BENCHMARK(BM_Sketch)->Unit(benchmark::kMillisecond);

void BM_VaeEncode(benchmark::State& state) {
    torch::manual_seed(0);
    auto cfg = preset_config("desk-cpu");
    vae::VideoVae model(cfg.vae);
    const VideoTensor clip(torch::rand({17, cfg.data.height, cfg.data.width, 3}));
    for (auto _ : state) {
        benchmark::DoNotOptimize(vae::encode(model, clip));
    }
}
BENCHMARK(BM_VaeEncode)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
    at::set_num_threads(1);
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) {
        return 1;
    }
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
