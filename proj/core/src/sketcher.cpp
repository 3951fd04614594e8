#include "sketchcolour/sketcher.hpp"

#include <cmath>
#include <vector>

#include <torch/torch.h>

#include "sketchcolour/errors.hpp"

namespace sketchcolour::sketch {

namespace {

void check_frame(const torch::Tensor& frame) {
    if (frame.dim() != 3 || frame.size(2) != 3 || frame.size(0) < 1 || frame.size(1) < 1) {
        throw DimensionError("sketch extraction expects an H x W x 3 frame");
    }
}

}  // namespace

torch::Tensor luminance(const torch::Tensor& frame) {
    check_frame(frame);
    auto f = frame.to(torch::kFloat64);
    return 0.299 * f.select(2, 0) + 0.587 * f.select(2, 1) + 0.114 * f.select(2, 2);
}

std::vector<double> gaussian_taps(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += taps[i + radius];
    }
    for (double& t : taps) {
        t /= sum;
    }
    return taps;
}

torch::Tensor gaussian_blur(const torch::Tensor& plane, double sigma) {
    const auto taps = gaussian_taps(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    auto src = plane.to(torch::kFloat64).contiguous();
    const int64_t h = src.size(0);
    const int64_t w = src.size(1);
    std::vector<double> tmp(h * w);
    std::vector<double> out(h * w);
    const double* in = src.data_ptr<double>();
    auto clampi = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += taps[k + radius] * in[y * w + clampi(x + k, w - 1)];
            }
            tmp[y * w + x] = acc;
        }
    }
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += taps[k + radius] * tmp[clampi(y + k, h - 1) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    return torch::from_blob(out.data(), {h, w}, torch::kFloat64).clone();
}

torch::Tensor extract_sketch(const torch::Tensor& frame, const SketchConfig& config) {
    config.validate();
    const auto luma = luminance(frame);
    const auto dog = (gaussian_blur(luma, config.sigmaNarrow) - gaussian_blur(luma, config.sigmaWide)).abs();
    // Soft strength: zero below the threshold, saturating at twice the threshold.
    auto strength = torch::where(dog >= config.dogThreshold,
                                 (dog / (2.0 * config.dogThreshold)).clamp_max(1.0),
                                 torch::zeros_like(dog));
    auto sketch = config.invert ? 1.0 - strength : strength;
    return sketch.to(torch::kFloat32);
}

torch::Tensor binarize(const torch::Tensor& sketch, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("binarize threshold must lie in (0,1)");
    }
    return (sketch >= threshold).to(torch::kFloat32);
}

VideoTensor sketch_video(const VideoTensor& video, const SketchConfig& config) {
    std::vector<torch::Tensor> frames;
    frames.reserve(video.frames());
    for (int64_t t = 0; t < video.frames(); ++t) {
        auto s = binarize(extract_sketch(video.data()[t], config), config.binarizeThreshold);
        frames.push_back(s.unsqueeze(2).expand({-1, -1, 3}));
    }
    return VideoTensor(torch::stack(frames).contiguous());
}

bool is_binary(const torch::Tensor& values) {
    return ((values == 0) | (values == 1)).all().item<bool>();
}

}  // namespace sketchcolour::sketch
