#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// Nothing here calls into the library's metric or schedule code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "sketchcolour/config.hpp"

namespace oracle {

// Plain H x W x 3 image in double, values on the 0-255 scale.
struct Image {
    int64_t h = 0;
    int64_t w = 0;
    std::vector<double> px;  // (y * w + x) * 3 + c

    double at(int64_t y, int64_t x, int64_t c) const { return px[static_cast<size_t>((y * w + x) * 3 + c)]; }
};

inline Image from_tensor(const torch::Tensor& frame) {
    auto f = frame.to(torch::kFloat64).contiguous();
    Image img{f.size(0), f.size(1), {}};
    img.px.resize(static_cast<size_t>(f.numel()));
    const double* p = f.data_ptr<double>();
    for (size_t i = 0; i < img.px.size(); ++i) {
        img.px[i] = p[i] * 255.0;
    }
    return img;
}

inline double msce_rgb(const Image& a, const Image& b) {
    double total = 0.0;
    for (int64_t y = 0; y < a.h; ++y) {
        for (int64_t x = 0; x < a.w; ++x) {
            double s = 0.0;
            for (int64_t c = 0; c < 3; ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                s += d * d;
            }
            total += s;
        }
    }
    return total / static_cast<double>(a.h * a.w);
}

inline double psnr(const Image& a, const Image& b) {
    double total = 0.0;
    for (size_t i = 0; i < a.px.size(); ++i) {
        const double d = a.px[i] - b.px[i];
        total += d * d;
    }
    const double mse = total / static_cast<double>(a.px.size());
    if (mse == 0.0) {
        return 100.0;
    }
    return std::min(100.0, 10.0 * std::log10(255.0 * 255.0 / mse));
}

inline std::vector<double> luma(const Image& a) {
    std::vector<double> out(static_cast<size_t>(a.h * a.w));
    for (int64_t y = 0; y < a.h; ++y) {
        for (int64_t x = 0; x < a.w; ++x) {
            out[static_cast<size_t>(y * a.w + x)] =
                0.299 * a.at(y, x, 0) + 0.587 * a.at(y, x, 1) + 0.114 * a.at(y, x, 2);
        }
    }
    return out;
}

// Brute-force SSIM: a full 2-D Gaussian window evaluated at every valid offset.
inline double ssim_luma(const Image& a, const Image& b, int64_t window, double sigma) {
    const auto la = luma(a);
    const auto lb = luma(b);
    const double c1 = std::pow(0.01 * 255.0, 2);
    const double c2 = std::pow(0.03 * 255.0, 2);
    std::vector<double> weights(static_cast<size_t>(window * window));
    double wsum = 0.0;
    const double mid = static_cast<double>(window - 1) / 2.0;
    for (int64_t i = 0; i < window; ++i) {
        for (int64_t j = 0; j < window; ++j) {
            const double di = static_cast<double>(i) - mid;
            const double dj = static_cast<double>(j) - mid;
            const double g = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            weights[static_cast<size_t>(i * window + j)] = g;
            wsum += g;
        }
    }
    for (auto& g : weights) {
        g /= wsum;
    }
    double total = 0.0;
    int64_t count = 0;
    for (int64_t y = 0; y + window <= a.h; ++y) {
        for (int64_t x = 0; x + window <= a.w; ++x) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int64_t i = 0; i < window; ++i) {
                for (int64_t j = 0; j < window; ++j) {
                    const double g = weights[static_cast<size_t>(i * window + j)];
                    const double p = la[static_cast<size_t>((y + i) * a.w + x + j)];
                    const double q = lb[static_cast<size_t>((y + i) * a.w + x + j)];
                    mx += g * p;
                    my += g * q;
                    sxx += g * p * p;
                    syy += g * q * q;
                    sxy += g * p * q;
                }
            }
            const double vx = sxx - mx * mx;
            const double vy = syy - my * my;
            const double cxy = sxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// Frechet distance of two diagonal Gaussians: |mu1 - mu2|^2 + sum (sqrt(v1) - sqrt(v2))^2.
inline double frechet_diagonal(const std::vector<double>& mu1, const std::vector<double>& var1,
                               const std::vector<double>& mu2, const std::vector<double>& var2) {
    double d = 0.0;
    for (size_t i = 0; i < mu1.size(); ++i) {
        d += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
        const double s = std::sqrt(var1[i]) - std::sqrt(var2[i]);
        d += s * s;
    }
    return d;
}

// Cosine cumulative signal fraction straight from its closed form.
inline double cosine_alpha_bar(int64_t t, int64_t steps, double s = 0.008) {
    auto f = [&](double u) {
        const double c = std::cos((u / static_cast<double>(steps) + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    return f(static_cast<double>(t + 1)) / f(0.0);
}

// Central finite-difference check over `count` randomly chosen scalar entries
// of the given parameters. Returns the worst relative error.
inline double worst_gradient_error(const std::vector<torch::Tensor>& params,
                                   const std::function<torch::Tensor()>& loss, int64_t count, uint64_t seed,
                                   double step = 1e-4) {
    for (const auto& p : params) {
        if (p.grad().defined()) {
            p.mutable_grad().zero_();
        }
    }
    loss().backward();
    std::vector<torch::Tensor> grads;
    for (const auto& p : params) {
        grads.push_back(p.grad().defined() ? p.grad().clone() : torch::zeros_like(p));
    }
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    torch::NoGradGuard guard;
    for (int64_t n = 0; n < count; ++n) {
        const size_t which = static_cast<size_t>(rng() % params.size());
        auto flat = params[which].view(-1);
        const int64_t idx = static_cast<int64_t>(rng() % static_cast<uint64_t>(flat.numel()));
        const double original = flat[idx].item<double>();
        flat[idx] = original + step;
        const double up = loss().item<double>();
        flat[idx] = original - step;
        const double down = loss().item<double>();
        flat[idx] = original;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = grads[which].view(-1)[idx].item<double>();
        const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
    return worst;
}

}  // namespace oracle

namespace fixtures {

inline sketchcolour::DitConfig micro_dit() {
    sketchcolour::DitConfig c;
    c.modelDim = 16;
    c.depth = 2;
    c.heads = 2;
    c.patchT = 1;
    c.patchH = 2;
    c.patchW = 2;
    c.latentChannels = 4;
    c.ffnMultiplier = 2;
    c.gridT = 3;
    c.gridH = 4;
    c.gridW = 4;
    return c;
}

// Overwrites every parameter with seeded Gaussian noise. Freshly built
// denoisers have zero gates and a zero head, which would make most
// invariants hold trivially.
inline void randomize(torch::nn::Module& module, uint64_t seed, double scale = 0.2) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    torch::NoGradGuard guard;
    for (auto& p : module.parameters(true)) {
        p.copy_(torch::randn(p.sizes(), gen, p.options()) * scale);
    }
}

inline sketchcolour::VaeConfig micro_vae() {
    sketchcolour::VaeConfig c;
    c.temporalFactor = 4;
    c.spatialFactor = 2;
    c.latentChannels = 4;
    c.baseWidth = 4;
    return c;
}

inline sketchcolour::ExperimentConfig tiny_experiment() {
    auto c = sketchcolour::preset_config("smoke");
    c.data.trainClips = 3;
    c.data.testClips = 2;
    c.data.frames = 5;
    c.data.minClipFrames = 5;
    c.data.maxClipFrames = 7;
    c.data.height = 16;
    c.data.width = 16;
    c.vae = micro_vae();
    c.dit = micro_dit();
    c.lora.rank = 2;
    c.schedule.steps = 50;
    c.sampler.numInferenceSteps = 4;
    c.trainVae.steps = 3;
    c.trainVae.logEvery = 1;
    c.trainBase.steps = 3;
    c.trainBase.logEvery = 1;
    c.trainSketch.steps = 3;
    c.trainSketch.logEvery = 1;
    c.eval.featureDim = 8;
    c.resolve();
    return c;
}

}  // namespace fixtures
