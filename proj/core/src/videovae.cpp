#include "sketchcolour/videovae.hpp"

#include <cmath>
#include <string>

#include <ATen/CPUGeneratorImpl.h>

#include "sketchcolour/errors.hpp"

namespace sketchcolour::vae {

namespace {

void check_finite(const torch::Tensor& x, const char* where, size_t layer) {
    if (!torch::isfinite(x).all().item<bool>()) {
        throw NumericError(std::string("non-finite activation in ") + where + " layer " + std::to_string(layer));
    }
}

int64_t log2_exact(int64_t v) {
    int64_t n = 0;
    while ((int64_t{1} << n) < v) {
        ++n;
    }
    return n;
}

int64_t level_channels(int64_t baseWidth, int64_t level) {
    return level < 2 ? baseWidth : baseWidth * 2;
}

}  // namespace

CausalConv3dImpl::CausalConv3dImpl(int64_t inChannels, int64_t outChannels, std::array<int64_t, 3> kernel,
                                   std::array<int64_t, 3> stride)
    : temporalPad_(kernel[0] - 1) {
    conv_ = register_module(
        "conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(inChannels, outChannels, {kernel[0], kernel[1], kernel[2]})
                                      .stride({stride[0], stride[1], stride[2]})
                                      .padding({0, kernel[1] / 2, kernel[2] / 2})));
}

torch::Tensor CausalConv3dImpl::forward(const torch::Tensor& x) {
    if (temporalPad_ == 0) {
        return conv_->forward(x);
    }
    auto first = x.narrow(2, 0, 1).expand({-1, -1, temporalPad_, -1, -1});
    return conv_->forward(torch::cat({first, x}, 2));
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
    conv1_ = register_module("conv1", CausalConv3d(channels, channels, std::array<int64_t, 3>{3, 3, 3}));
    conv2_ = register_module("conv2", CausalConv3d(channels, channels, std::array<int64_t, 3>{3, 3, 3}));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    return x + conv2_->forward(torch::silu(conv1_->forward(torch::silu(x))));
}

VideoVaeImpl::VideoVaeImpl(const VaeConfig& config) : config_(config) {
    config_.validate();
    const int64_t downs = log2_exact(config_.spatialFactor);
    const int64_t bw = config_.baseWidth;

    encoder_ = register_module("encoder", torch::nn::ModuleList());
    encoder_->push_back(CausalConv3d(3, bw, std::array<int64_t, 3>{1, 3, 3}));
    int64_t ch = bw;
    for (int64_t level = 0; level < downs; ++level) {
        const int64_t next = level_channels(bw, level + 1);
        encoder_->push_back(CausalConv3d(ch, next, std::array<int64_t, 3>{3, 3, 3}, std::array<int64_t, 3>{1, 2, 2}));
        ch = next;
    }
    if (config_.temporalFactor > 1) {
        encoder_->push_back(CausalConv3d(ch, ch, std::array<int64_t, 3>{config_.temporalFactor, 3, 3},
                                         std::array<int64_t, 3>{config_.temporalFactor, 1, 1}));
    }
    encoder_->push_back(ResidualBlock(ch));
    encoderHead_ = register_module(
        "encoder_head", CausalConv3d(ch, 2 * config_.latentChannels, std::array<int64_t, 3>{1, 1, 1}));

    decoderIn_ = register_module("decoder_in",
                                 CausalConv3d(config_.latentChannels, ch, std::array<int64_t, 3>{3, 3, 3}));
    decoder_ = register_module("decoder", torch::nn::ModuleList());
    decoder_->push_back(ResidualBlock(ch));
    decoderUpsamples_.push_back(false);
    if (config_.temporalFactor > 1) {
        decoder_->push_back(CausalConv3d(ch, ch, std::array<int64_t, 3>{3, 3, 3}));
        decoderUpsamples_.push_back(false);
    }
    for (int64_t level = downs; level > 0; --level) {
        const int64_t next = level_channels(bw, level - 1);
        decoder_->push_back(CausalConv3d(ch, next, std::array<int64_t, 3>{3, 3, 3}));
        decoderUpsamples_.push_back(true);
        ch = next;
    }
    decoderOut_ = register_module("decoder_out", CausalConv3d(ch, 3, std::array<int64_t, 3>{1, 3, 3}));
    latentScale_ = register_buffer("latent_scale", torch::ones({1}));
}

Posterior VideoVaeImpl::posterior(const torch::Tensor& x) {
    auto h = x * 2.0 - 1.0;
    size_t layer = 0;
    for (const auto& module : *encoder_) {
        if (auto* conv = module->as<CausalConv3dImpl>()) {
            h = torch::silu(conv->forward(h));
        } else if (auto* res = module->as<ResidualBlockImpl>()) {
            h = res->forward(h);
        }
        check_finite(h, "vae encoder", layer++);
    }
    auto stats = encoderHead_->forward(h);
    check_finite(stats, "vae encoder", layer);
    auto chunks = stats.chunk(2, 1);
    return {chunks[0], chunks[1].clamp(-30.0, 20.0)};
}

torch::Tensor VideoVaeImpl::encode_batch(const torch::Tensor& x, EncodeMode mode,
                                         std::optional<at::Generator> generator) {
    auto post = posterior(x);
    auto z = post.mean;
    if (mode == EncodeMode::sample) {
        auto eps = torch::randn(post.mean.sizes(), generator, post.mean.options());
        z = post.mean + torch::exp(0.5 * post.logvar) * eps;
    }
    return z * latentScale_;
}

torch::Tensor VideoVaeImpl::decode_raw(const torch::Tensor& z) {
    if (z.dim() != 5 || z.size(1) != config_.latentChannels) {
        throw ConfigError("latent has " + std::to_string(z.dim() == 5 ? z.size(1) : -1) +
                          " channels, VAE expects " + std::to_string(config_.latentChannels));
    }
    auto h = torch::silu(decoderIn_->forward(z));
    size_t layer = 0;
    check_finite(h, "vae decoder", layer++);
    const int64_t tf = config_.temporalFactor;
    bool temporalDone = tf == 1;
    for (size_t i = 0; i < decoder_->size(); ++i) {
        const auto& module = decoder_[i];
        if (auto* res = module->as<ResidualBlockImpl>()) {
            h = res->forward(h);
        } else if (auto* conv = module->as<CausalConv3dImpl>()) {
            if (!temporalDone) {
                // Causal inverse of the temporal compression: L -> (L - 1) * tf + 1 frames.
                h = h.repeat_interleave(tf, 2);
                h = h.narrow(2, tf - 1, h.size(2) - (tf - 1));
                temporalDone = true;
            } else if (decoderUpsamples_[i]) {
                h = h.repeat_interleave(2, 3).repeat_interleave(2, 4);
            }
            h = torch::silu(conv->forward(h));
        }
        check_finite(h, "vae decoder", layer++);
    }
    auto y = decoderOut_->forward(h);
    check_finite(y, "vae decoder", layer);
    return (y + 1.0) * 0.5;
}

torch::Tensor VideoVaeImpl::decode_batch(const torch::Tensor& scaledLatent) {
    return decode_raw(scaledLatent / latentScale_).clamp(0.0, 1.0);
}

double VideoVaeImpl::latent_scale() const { return latentScale_.item<double>(); }

void VideoVaeImpl::set_latent_scale(double scale) {
    torch::NoGradGuard guard;
    latentScale_.fill_(scale);
}

std::array<int64_t, 3> latent_shape(const VaeConfig& config, int64_t frames, int64_t height, int64_t width) {
    if (frames < 1 || (frames - 1) % config.temporalFactor != 0) {
        throw DimensionError("frames axis: " + std::to_string(frames) + " frames must be 1 mod temporalFactor " +
                             std::to_string(config.temporalFactor));
    }
    if (height % config.spatialFactor != 0) {
        throw DimensionError("height axis: " + std::to_string(height) + " must be divisible by spatialFactor " +
                             std::to_string(config.spatialFactor));
    }
    if (width % config.spatialFactor != 0) {
        throw DimensionError("width axis: " + std::to_string(width) + " must be divisible by spatialFactor " +
                             std::to_string(config.spatialFactor));
    }
    return {(frames - 1) / config.temporalFactor + 1, height / config.spatialFactor, width / config.spatialFactor};
}

std::array<int64_t, 3> pixel_shape(const VaeConfig& config, int64_t latentFrames, int64_t latentHeight,
                                   int64_t latentWidth) {
    return {(latentFrames - 1) * config.temporalFactor + 1, latentHeight * config.spatialFactor,
            latentWidth * config.spatialFactor};
}

LatentTensor encode(VideoVae& vae, const VideoTensor& video, EncodeMode mode, uint64_t seed) {
    latent_shape(vae->config(), video.frames(), video.height(), video.width());
    std::optional<at::Generator> gen;
    if (mode == EncodeMode::sample) {
        gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    }
    torch::NoGradGuard guard;
    return LatentTensor::from_ncdhw(vae->encode_batch(video.to_ncdhw(), mode, gen));
}

VideoTensor decode(VideoVae& vae, const LatentTensor& latent) {
    if (latent.channels() != vae->config().latentChannels) {
        throw ConfigError("latent has " + std::to_string(latent.channels()) + " channels, VAE expects " +
                          std::to_string(vae->config().latentChannels));
    }
    torch::NoGradGuard guard;
    return VideoTensor::from_ncdhw(vae->decode_batch(latent.to_ncdhw()));
}

LatentTensor pad_reference(const LatentTensor& reference, int64_t targetLatentFrames) {
    if (reference.frames() != 1) {
        throw ContractError("reference latent must hold exactly one frame, got " +
                            std::to_string(reference.frames()));
    }
    if (targetLatentFrames < 1) {
        throw ContractError("target latent frame count must be >= 1");
    }
    auto padded = torch::zeros({targetLatentFrames, reference.height(), reference.width(), reference.channels()},
                               reference.data().options());
    padded.narrow(0, 0, 1).copy_(reference.data());
    return LatentTensor(padded);
}

VaeLoss vae_loss_terms(const torch::Tensor& target, const torch::Tensor& reconstruction,
                       const Posterior& posterior, double klWeight) {
    auto rec = (reconstruction - target).pow(2).mean();
    auto kl = (0.5 * (posterior.mean.pow(2) + posterior.logvar.exp() - 1.0 - posterior.logvar)).mean();
    return {rec + klWeight * kl, rec, kl};
}

VaeLoss vae_loss(VideoVae& vae, const torch::Tensor& videoBatch, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto post = vae->posterior(videoBatch);
    auto eps = torch::randn(post.mean.sizes(), gen, post.mean.options());
    auto z = post.mean + torch::exp(0.5 * post.logvar) * eps;
    auto recon = vae->decode_raw(z);
    return vae_loss_terms(videoBatch, recon, post, vae->config().klWeight);
}

VaeLoss vae_loss(VideoVae& vae, const VideoTensor& video, uint64_t seed) {
    latent_shape(vae->config(), video.frames(), video.height(), video.width());
    return vae_loss(vae, video.to_ncdhw(), seed);
}

PcaProjection pca_channel_projection(const LatentTensor& latent, int64_t components) {
    const int64_t channels = latent.channels();
    if (components < 1 || components > channels) {
        throw ContractError("components must lie in [1, " + std::to_string(channels) + "]");
    }
    auto x = latent.data().to(torch::kFloat64).reshape({-1, channels});
    const int64_t n = x.size(0);
    if (n < components || n < 2) {
        throw DegenerateInputError("PCA needs at least " + std::to_string(std::max<int64_t>(components, 2)) +
                                   " latent positions");
    }
    auto mean = x.mean(0);
    auto centered = x - mean;
    auto cov = centered.t().mm(centered) / static_cast<double>(n - 1);
    const double totalVariance = cov.trace().item<double>();
    if (!(totalVariance > 1e-12)) {
        throw DegenerateInputError("latent is constant over positions; covariance has rank 0");
    }
    auto [evals, evecs] = torch::linalg_eigh(cov);
    // eigh returns ascending order; take the top components.
    auto order = torch::arange(channels - 1, channels - 1 - components, -1, torch::kLong);
    auto basis = evecs.index_select(1, order).clone();
    auto topVals = evals.index_select(0, order);
    // Deterministic sign: the largest-magnitude loading of each axis is positive.
    for (int64_t k = 0; k < components; ++k) {
        auto col = basis.select(1, k);
        auto idx = col.abs().argmax().item<int64_t>();
        if (col[idx].item<double>() < 0.0) {
            col.neg_();
        }
    }
    auto scores = centered.mm(basis);
    auto lo = std::get<0>(scores.min(0));
    auto hi = std::get<0>(scores.max(0));
    auto range = hi - lo;
    auto safe = torch::where(range > 1e-12, range, torch::ones_like(range));
    auto normalized = torch::where(range > 1e-12, (scores - lo) / safe, torch::zeros_like(scores));

    PcaProjection out;
    out.images = normalized.clamp(0.0, 1.0)
                     .to(torch::kFloat32)
                     .reshape({latent.frames(), latent.height(), latent.width(), components});
    out.scores = scores;
    out.basis = basis;
    out.mean = mean;
    for (int64_t k = 0; k < components; ++k) {
        out.explainedVarianceRatio.push_back(std::max(0.0, topVals[k].item<double>()) / totalVariance);
    }
    return out;
}

}  // namespace sketchcolour::vae
