#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "sketchcolour/config.hpp"
#include "sketchcolour/tensor_types.hpp"

namespace sketchcolour::vae {

/// 3D convolution that only looks at past frames: the temporal axis is padded
/// on the past side with copies of the first frame, spatial axes symmetrically.
class CausalConv3dImpl : public torch::nn::Module {
public:
    CausalConv3dImpl(int64_t inChannels, int64_t outChannels, std::array<int64_t, 3> kernel,
                     std::array<int64_t, 3> stride = {1, 1, 1});

    torch::Tensor forward(const torch::Tensor& x);

private:
    int64_t temporalPad_;
    torch::nn::Conv3d conv_{nullptr};
};
TORCH_MODULE(CausalConv3d);

class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    CausalConv3d conv1_{nullptr};
    CausalConv3d conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

struct Posterior {
    torch::Tensor mean;    // [B, C, t, h, w]
    torch::Tensor logvar;  // [B, C, t, h, w]
};

enum class EncodeMode { mean, sample };

/// Causal convolutional video VAE. Spatial compression by stride-2 convolutions
/// (log2 spatialFactor of them), temporal compression by one causal stride-
/// temporalFactor convolution, so T frames map to (T - 1) / temporalFactor + 1.
class VideoVaeImpl : public torch::nn::Module {
public:
    explicit VideoVaeImpl(const VaeConfig& config);

    const VaeConfig& config() const noexcept { return config_; }

    /// x: [B, 3, T, H, W] in [0,1]. Returns the unscaled diagonal-Gaussian posterior.
    Posterior posterior(const torch::Tensor& x);

    /// Scaled latent batch [B, C, t, h, w]. `generator` drives the sample in
    /// EncodeMode::sample and is ignored for the posterior mean.
    torch::Tensor encode_batch(const torch::Tensor& x, EncodeMode mode,
                               std::optional<at::Generator> generator = std::nullopt);

    /// Unclamped reconstruction in pixel units; z is an unscaled latent.
    torch::Tensor decode_raw(const torch::Tensor& z);
    /// Scaled latent batch -> [B, 3, T, H, W] clamped to [0,1].
    torch::Tensor decode_batch(const torch::Tensor& scaledLatent);

    /// Multiplier mapping posterior means to unit-scale diffusion latents.
    double latent_scale() const;
    void set_latent_scale(double scale);

private:
    VaeConfig config_;
    torch::nn::ModuleList encoder_;
    CausalConv3d encoderHead_{nullptr};
    CausalConv3d decoderIn_{nullptr};
    torch::nn::ModuleList decoder_;
    CausalConv3d decoderOut_{nullptr};
    std::vector<bool> decoderUpsamples_;
    torch::Tensor latentScale_;
};
TORCH_MODULE(VideoVae);

/// Latent geometry for a pixel clip; throws DimensionError naming the axis.
std::array<int64_t, 3> latent_shape(const VaeConfig& config, int64_t frames, int64_t height, int64_t width);
/// Pixel geometry for a latent clip (inverse shape law).
std::array<int64_t, 3> pixel_shape(const VaeConfig& config, int64_t latentFrames, int64_t latentHeight,
                                   int64_t latentWidth);

/// Encodes a clip. The posterior mean is returned in EncodeMode::mean; otherwise
/// `seed` drives the reparameterised sample.
LatentTensor encode(VideoVae& vae, const VideoTensor& video, EncodeMode mode = EncodeMode::mean,
                    uint64_t seed = 0);

VideoTensor decode(VideoVae& vae, const LatentTensor& latent);

/// Zero-pads a single-frame reference latent to `targetLatentFrames` frames.
LatentTensor pad_reference(const LatentTensor& reference, int64_t targetLatentFrames);

struct VaeLoss {
    torch::Tensor total;
    torch::Tensor reconstruction;
    torch::Tensor kl;
};

/// reconstruction: pixel MSE on the [0,1] scale; kl: analytic KL to N(0, I),
/// averaged per latent element; total = reconstruction + klWeight * kl.
VaeLoss vae_loss(VideoVae& vae, const torch::Tensor& videoBatch, uint64_t seed);
VaeLoss vae_loss(VideoVae& vae, const VideoTensor& video, uint64_t seed);

/// Loss pieces from an explicit posterior and reconstruction.
VaeLoss vae_loss_terms(const torch::Tensor& target, const torch::Tensor& reconstruction,
                       const Posterior& posterior, double klWeight);

struct PcaProjection {
    torch::Tensor images;          // latentFrames x h x w x components, each component in [0,1]
    torch::Tensor scores;          // raw projections, positions x components (double)
    torch::Tensor basis;           // channels x components (double, orthonormal columns)
    torch::Tensor mean;            // channels (double)
    std::vector<double> explainedVarianceRatio;
};

/// PCA over the channel axis treating every (t, h, w) position as a sample.
PcaProjection pca_channel_projection(const LatentTensor& latent, int64_t components = 3);

}  // namespace sketchcolour::vae
