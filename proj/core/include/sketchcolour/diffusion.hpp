#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "sketchcolour/config.hpp"
#include "sketchcolour/dataset.hpp"
#include "sketchcolour/denoiser.hpp"
#include "sketchcolour/tensor_types.hpp"
#include "sketchcolour/videovae.hpp"

namespace sketchcolour::diffusion {

/// Discrete schedule of cumulative signal fractions alphaBar[t], t in [0, steps).
class NoiseSchedule {
public:
    explicit NoiseSchedule(const ScheduleConfig& config);

    int64_t steps() const { return static_cast<int64_t>(alphaBars_.size()); }
    PredictionType prediction() const { return config_.predictionType; }
    const ScheduleConfig& config() const { return config_; }

    /// Throws ContractError outside [0, steps).
    double alpha_bar(int64_t t) const;
    const std::vector<double>& alpha_bars() const { return alphaBars_; }
    const std::vector<double>& betas() const { return betas_; }

private:
    ScheduleConfig config_;
    std::vector<double> betas_;
    std::vector<double> alphaBars_;
};

/// x_t = sqrt(ab) x0 + sqrt(1 - ab) eps
torch::Tensor add_noise(const torch::Tensor& x0, const torch::Tensor& eps, double alphaBar);
LatentTensor add_noise(const LatentTensor& x0, const LatentTensor& eps, int64_t t, const NoiseSchedule& schedule);

/// v = sqrt(ab) eps - sqrt(1 - ab) x0, or eps for epsilon prediction.
torch::Tensor target_for(const torch::Tensor& x0, const torch::Tensor& eps, double alphaBar, PredictionType type);
LatentTensor target_for(const LatentTensor& x0, const LatentTensor& eps, int64_t t, const NoiseSchedule& schedule);

struct Estimates {
    torch::Tensor x0;
    torch::Tensor eps;
};

/// Recovers the clean-sample and noise estimates from a model prediction.
Estimates estimates_from_prediction(const torch::Tensor& xt, const torch::Tensor& prediction, double alphaBar,
                                    PredictionType type);

/// Trailing spacing: t_i = round(steps - i * steps / n) - 1, strictly decreasing, t_0 = steps - 1.
std::vector<int64_t> ddim_timesteps(int64_t steps, int64_t numInferenceSteps);

using PredictFn = std::function<torch::Tensor(const torch::Tensor& xt, int64_t t)>;

/// DDIM from `init` (noise at the first timestep) down to the clean end.
/// `generator` is only used when eta > 0.
torch::Tensor ddim_sample(const PredictFn& predict, torch::Tensor init, const NoiseSchedule& schedule,
                          const SamplerConfig& sampler, std::optional<at::Generator> generator = std::nullopt);

/// Frozen-VAE latents of one training triplet, each [1, C, t, h, w].
struct EncodedExample {
    torch::Tensor target;     // ground-truth video latent
    torch::Tensor reference;  // zero-padded first-frame latent
    torch::Tensor sketch;     // sketch video latent
};

EncodedExample encode_example(vae::VideoVae& vae, const data::TrainingExample& example);

/// Mean squared error between the model output and the diffusion target for a
/// latent batch; timesteps and noise are drawn from `seed`. `sketch` may be
/// undefined for 2-stream models.
torch::Tensor latent_loss(dit::Denoiser& model, const torch::Tensor& target, const torch::Tensor& reference,
                          const torch::Tensor& sketch, const NoiseSchedule& schedule, uint64_t seed);

torch::Tensor training_loss(dit::Denoiser& model, vae::VideoVae& vae, const data::TrainingExample& example,
                            const NoiseSchedule& schedule, uint64_t seed);

/// Colourises a sketch sequence from a reference frame. Throws ContractError for
/// models without a sketch stream.
VideoTensor sample(dit::Denoiser& model, vae::VideoVae& vae, const VideoTensor& reference,
                   const VideoTensor& sketches, const NoiseSchedule& schedule, const SamplerConfig& sampler);

/// Reference-only generation with a 2-stream model; output has `frames` frames.
VideoTensor sample_without_sketch(dit::Denoiser& model, vae::VideoVae& vae, const VideoTensor& reference,
                                  int64_t frames, const NoiseSchedule& schedule, const SamplerConfig& sampler);

}  // namespace sketchcolour::diffusion
