#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "sketchcolour/config.hpp"
#include "sketchcolour/lora_linear.hpp"
#include "sketchcolour/tensor_types.hpp"

namespace sketchcolour::dit {

/// Anything that predicts the diffusion target from a noisy latent batch.
/// All latent arguments are [B, C, t, h, w]; `sketch` is undefined for
/// models without a sketch stream.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual torch::Tensor predict(const torch::Tensor& noisy, const torch::Tensor& reference,
                                  const torch::Tensor& sketch, const torch::Tensor& timesteps) = 0;
    virtual bool accepts_sketch() const = 0;
};

using Grid = std::array<int64_t, 3>;

struct TokenSequence {
    torch::Tensor tokens;  // [B, N, modelDim]
    Grid grid{};           // nT, nH, nW
};

/// Flattened patch projection for a stack of input channels.
struct PatchEmbedWeights {
    torch::Tensor kernel;  // inputChannels x patchVolume x modelDim
    torch::Tensor bias;    // modelDim

    int64_t input_channels() const { return kernel.size(0); }
};

/// Channel order is fixed: noisy, reference, sketch. Throws DimensionError naming the stream.
LatentTensor concat_streams(const LatentTensor& noisy, const LatentTensor& reference, const LatentTensor& sketch);

Grid token_grid(const DitConfig& config, int64_t latentFrames, int64_t latentHeight, int64_t latentWidth);

/// [B, C, t, h, w] -> [B, N, C * patchVolume]; each row is ordered (channel, pt, ph, pw).
torch::Tensor patch_vectors(const torch::Tensor& latent, const DitConfig& config, Grid* grid = nullptr);
/// Inverse of patch_vectors for `channels` channels.
torch::Tensor unpatch_vectors(const torch::Tensor& vectors, const Grid& grid, const DitConfig& config,
                              int64_t channels);

/// One projection kernel per latent stream; forward sums the per-stream products,
/// so a zero kernel for a stream contributes exactly nothing.
class PatchEmbedImpl : public torch::nn::Module {
public:
    PatchEmbedImpl(const DitConfig& config, int64_t streams);

    /// vectors: [B, N, streams * latentChannels * patchVolume]
    torch::Tensor forward(const torch::Tensor& vectors);

    int64_t streams() const { return static_cast<int64_t>(kernels.size()); }
    PatchEmbedWeights weights() const;
    void load(const PatchEmbedWeights& weights);

    std::vector<torch::Tensor> kernels;  // each (latentChannels * patchVolume) x modelDim
    torch::Tensor bias;

private:
    int64_t streamWidth_;
    int64_t latentChannels_;
    int64_t volume_;
};
TORCH_MODULE(PatchEmbed);

/// Appends a zero kernel slice for one more latent stream; bias and existing rows are kept bitwise.
PatchEmbedWeights expand_patch_embedding(const PatchEmbedWeights& pretrained, const DitConfig& config);

class TimestepEmbedderImpl : public torch::nn::Module {
public:
    TimestepEmbedderImpl(int64_t modelDim, int64_t frequencyDim = 256);
    torch::Tensor forward(const torch::Tensor& timesteps);

private:
    int64_t frequencyDim_;
    torch::nn::Linear fc1_{nullptr};
    torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(TimestepEmbedder);

/// Sinusoidal features [cos | sin] of a timestep batch.
torch::Tensor timestep_frequencies(const torch::Tensor& timesteps, int64_t dim);

/// Pre-norm transformer block with adaptive layer-norm modulation (zero-init gates).
class TransformerBlockImpl : public torch::nn::Module {
public:
    TransformerBlockImpl(int64_t modelDim, int64_t heads, int64_t ffnHidden);

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

    adapters::LoraLinear& target(LoraTarget which);
    /// Copies every parameter and buffer from `other` (same geometry).
    void copy_from(TransformerBlockImpl& other);

    adapters::LoraLinear q{nullptr};
    adapters::LoraLinear k{nullptr};
    adapters::LoraLinear v{nullptr};
    adapters::LoraLinear o{nullptr};
    adapters::LoraLinear ffnIn{nullptr};
    adapters::LoraLinear ffnOut{nullptr};
    torch::nn::Linear modulation{nullptr};

private:
    int64_t heads_;
};
TORCH_MODULE(TransformerBlock);

/// Spatiotemporal DiT over channel-concatenated latent streams.
class DiffusionTransformerImpl : public torch::nn::Module, public Denoiser {
public:
    /// `streams` is 2 (noisy + reference) for the base model or 3 with the sketch stream.
    DiffusionTransformerImpl(const DitConfig& config, int64_t streams);

    const DitConfig& config() const noexcept { return config_; }
    int64_t streams() const { return patchEmbed->streams(); }

    torch::Tensor predict(const torch::Tensor& noisy, const torch::Tensor& reference, const torch::Tensor& sketch,
                          const torch::Tensor& timesteps) override;
    bool accepts_sketch() const override { return streams() == 3; }

    /// Stacked streams [B, streams * C, t, h, w] -> projected tokens plus positional embedding.
    TokenSequence patchify(const torch::Tensor& stacked);
    /// Linear head on each token, reassembled into [B, latentChannels, t, h, w].
    torch::Tensor unpatchify(const TokenSequence& tokens);
    torch::Tensor positional(const Grid& grid);
    torch::Tensor condition(const torch::Tensor& timesteps);
    /// Runs block `index`, checking the result is finite.
    torch::Tensor run_block(size_t index, const torch::Tensor& x, const torch::Tensor& cond);
    /// Final adaptive norm and head.
    torch::Tensor finish(const TokenSequence& tokens, const torch::Tensor& cond);

    /// Replaces the 2-stream patch embedding with its zero-initialised 3-stream expansion.
    void expand_for_sketch();

    PatchEmbed patchEmbed{nullptr};
    torch::Tensor posT;
    torch::Tensor posH;
    torch::Tensor posW;
    TimestepEmbedder timeEmbed{nullptr};
    std::vector<TransformerBlock> blocks;
    torch::nn::Linear finalModulation{nullptr};
    torch::nn::Linear head{nullptr};

private:
    DitConfig config_;
    torch::nn::ModuleList blockList_;
};
TORCH_MODULE(DiffusionTransformer);

/// Single-sample prediction on latent tensors; throws ContractError when the
/// sketch is given to a model without a sketch stream.
LatentTensor forward(Denoiser& model, const LatentTensor& noisy, const LatentTensor& reference,
                     const LatentTensor& sketch, int64_t timestep);

}  // namespace sketchcolour::dit
