#include "sketchcolour/diffusion.hpp"

#include <cmath>
#include <numbers>

#include <ATen/CPUGeneratorImpl.h>

#include "sketchcolour/errors.hpp"

namespace sketchcolour::diffusion {

namespace {

constexpr double kCosineOffset = 0.008;
constexpr double kMaxBeta = 0.999;

double cosine_f(double t, double total) {
    const double c = std::cos((t / total + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
    return c * c;
}

at::Generator seeded(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

}  // namespace

NoiseSchedule::NoiseSchedule(const ScheduleConfig& config) : config_(config) {
    config.validate();
    const int64_t n = config.steps;
    betas_.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        if (config.kind == ScheduleKind::linear) {
            betas_[i] = n == 1 ? config.betaStart
                               : config.betaStart + (config.betaEnd - config.betaStart) * static_cast<double>(i) /
                                                        static_cast<double>(n - 1);
        } else {
            const double total = static_cast<double>(n);
            betas_[i] = std::min(1.0 - cosine_f(i + 1.0, total) / cosine_f(static_cast<double>(i), total), kMaxBeta);
        }
    }
    alphaBars_.resize(betas_.size());
    double acc = 1.0;
    for (size_t i = 0; i < betas_.size(); ++i) {
        acc *= 1.0 - betas_[i];
        alphaBars_[i] = acc;
    }
}

double NoiseSchedule::alpha_bar(int64_t t) const {
    if (t < 0 || t >= steps()) {
        throw ContractError("timestep " + std::to_string(t) + " outside schedule range [0, " +
                            std::to_string(steps()) + ")");
    }
    return alphaBars_[static_cast<size_t>(t)];
}

torch::Tensor add_noise(const torch::Tensor& x0, const torch::Tensor& eps, double alphaBar) {
    if (x0.sizes() != eps.sizes()) {
        throw DimensionError("add_noise: x0 and eps shapes differ");
    }
    return std::sqrt(alphaBar) * x0 + std::sqrt(1.0 - alphaBar) * eps;
}

LatentTensor add_noise(const LatentTensor& x0, const LatentTensor& eps, int64_t t, const NoiseSchedule& schedule) {
    return LatentTensor(add_noise(x0.data(), eps.data(), schedule.alpha_bar(t)));
}

torch::Tensor target_for(const torch::Tensor& x0, const torch::Tensor& eps, double alphaBar, PredictionType type) {
    if (x0.sizes() != eps.sizes()) {
        throw DimensionError("target_for: x0 and eps shapes differ");
    }
    if (type == PredictionType::epsilon) {
        return eps.clone();
    }
    return std::sqrt(alphaBar) * eps - std::sqrt(1.0 - alphaBar) * x0;
}

LatentTensor target_for(const LatentTensor& x0, const LatentTensor& eps, int64_t t, const NoiseSchedule& schedule) {
    return LatentTensor(target_for(x0.data(), eps.data(), schedule.alpha_bar(t), schedule.prediction()));
}

Estimates estimates_from_prediction(const torch::Tensor& xt, const torch::Tensor& prediction, double alphaBar,
                                    PredictionType type) {
    const double a = std::sqrt(alphaBar);
    const double s = std::sqrt(1.0 - alphaBar);
    if (type == PredictionType::v) {
        return {a * xt - s * prediction, s * xt + a * prediction};
    }
    return {(xt - s * prediction) / a, prediction};
}

std::vector<int64_t> ddim_timesteps(int64_t steps, int64_t numInferenceSteps) {
    if (numInferenceSteps < 1 || numInferenceSteps > steps) {
        throw ConfigError("numInferenceSteps must lie in [1, " + std::to_string(steps) + "]");
    }
    std::vector<int64_t> ts;
    const double stride = static_cast<double>(steps) / static_cast<double>(numInferenceSteps);
    for (int64_t i = 0; i < numInferenceSteps; ++i) {
        ts.push_back(static_cast<int64_t>(std::llround(static_cast<double>(steps) - i * stride)) - 1);
    }
    return ts;
}

torch::Tensor ddim_sample(const PredictFn& predict, torch::Tensor init, const NoiseSchedule& schedule,
                          const SamplerConfig& sampler, std::optional<at::Generator> generator) {
    sampler.validate(schedule.config());
    const auto ts = ddim_timesteps(schedule.steps(), sampler.numInferenceSteps);
    auto x = std::move(init);
    for (size_t i = 0; i < ts.size(); ++i) {
        const double ab = schedule.alpha_bar(ts[i]);
        const double abPrev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
        const auto est = estimates_from_prediction(x, predict(x, ts[i]), ab, schedule.prediction());
        if (sampler.eta > 0.0 && abPrev < 1.0) {
            const double sigma =
                sampler.eta * std::sqrt((1.0 - abPrev) / (1.0 - ab)) * std::sqrt(1.0 - ab / abPrev);
            auto z = generator ? torch::randn(x.sizes(), *generator, x.options()) : torch::randn_like(x);
            x = std::sqrt(abPrev) * est.x0 + std::sqrt(std::max(0.0, 1.0 - abPrev - sigma * sigma)) * est.eps +
                sigma * z;
        } else {
            x = std::sqrt(abPrev) * est.x0 + std::sqrt(1.0 - abPrev) * est.eps;
        }
        if (!torch::isfinite(x).all().item<bool>()) {
            throw NumericError("sampler produced non-finite latents at timestep " + std::to_string(ts[i]));
        }
    }
    return x;
}

EncodedExample encode_example(vae::VideoVae& vae, const data::TrainingExample& example) {
    torch::NoGradGuard guard;
    auto target = vae->encode_batch(example.groundTruth.to_ncdhw(), vae::EncodeMode::mean);
    auto ref = vae->encode_batch(example.reference.to_ncdhw(), vae::EncodeMode::mean);
    auto sketch = vae->encode_batch(example.sketches.to_ncdhw(), vae::EncodeMode::mean);
    auto padded = vae::pad_reference(LatentTensor::from_ncdhw(ref), target.size(2));
    return {target, padded.to_ncdhw(), sketch};
}

torch::Tensor latent_loss(dit::Denoiser& model, const torch::Tensor& target, const torch::Tensor& reference,
                          const torch::Tensor& sketch, const NoiseSchedule& schedule, uint64_t seed) {
    const int64_t batch = target.size(0);
    auto gen = seeded(seed);
    auto ts = torch::randint(0, schedule.steps(), {batch}, gen, torch::kLong);
    auto eps = torch::randn(target.sizes(), gen, target.options());
    std::vector<torch::Tensor> noisy;
    std::vector<torch::Tensor> goals;
    for (int64_t b = 0; b < batch; ++b) {
        const double ab = schedule.alpha_bar(ts[b].item<int64_t>());
        noisy.push_back(add_noise(target[b], eps[b], ab));
        goals.push_back(target_for(target[b], eps[b], ab, schedule.prediction()));
    }
    auto out = model.predict(torch::stack(noisy), reference, sketch, ts.to(target.scalar_type()));
    return torch::mse_loss(out, torch::stack(goals));
}

torch::Tensor training_loss(dit::Denoiser& model, vae::VideoVae& vae, const data::TrainingExample& example,
                            const NoiseSchedule& schedule, uint64_t seed) {
    const auto enc = encode_example(vae, example);
    return latent_loss(model, enc.target, enc.reference, model.accepts_sketch() ? enc.sketch : torch::Tensor(),
                       schedule, seed);
}

namespace {

VideoTensor run_sampler(dit::Denoiser& model, vae::VideoVae& vae, const VideoTensor& reference, int64_t frames,
                        const torch::Tensor& sketchLatent, const NoiseSchedule& schedule,
                        const SamplerConfig& sampler) {
    torch::NoGradGuard guard;
    if (reference.frames() != 1) {
        throw ContractError("reference must be a single frame");
    }
    const auto shape = vae::latent_shape(vae->config(), frames, reference.height(), reference.width());
    auto ref = vae->encode_batch(reference.to_ncdhw(), vae::EncodeMode::mean);
    auto padded = vae::pad_reference(LatentTensor::from_ncdhw(ref), shape[0]).to_ncdhw();
    auto gen = seeded(sampler.seed);
    auto init = torch::randn({1, vae->config().latentChannels, shape[0], shape[1], shape[2]}, gen,
                             padded.options());
    auto predict = [&](const torch::Tensor& xt, int64_t t) {
        return model.predict(xt, padded, sketchLatent, torch::full({1}, static_cast<double>(t), xt.options()));
    };
    auto latent = ddim_sample(predict, init, schedule, sampler, gen);
    return VideoTensor::from_ncdhw(vae->decode_batch(latent));
}

}  // namespace

VideoTensor sample(dit::Denoiser& model, vae::VideoVae& vae, const VideoTensor& reference,
                   const VideoTensor& sketches, const NoiseSchedule& schedule, const SamplerConfig& sampler) {
    if (!model.accepts_sketch()) {
        throw ContractError("model has no sketch stream; load a sketch-capable (stage sketchB) checkpoint");
    }
    if (reference.height() != sketches.height() || reference.width() != sketches.width()) {
        throw DimensionError("reference and sketches differ in resolution");
    }
    torch::Tensor sketchLatent;
    {
        torch::NoGradGuard guard;
        sketchLatent = vae->encode_batch(sketches.to_ncdhw(), vae::EncodeMode::mean);
    }
    return run_sampler(model, vae, reference, sketches.frames(), sketchLatent, schedule, sampler);
}

VideoTensor sample_without_sketch(dit::Denoiser& model, vae::VideoVae& vae, const VideoTensor& reference,
                                  int64_t frames, const NoiseSchedule& schedule, const SamplerConfig& sampler) {
    if (model.accepts_sketch()) {
        throw ContractError("sketch-conditioned model used for reference-only sampling");
    }
    return run_sampler(model, vae, reference, frames, torch::Tensor(), schedule, sampler);
}

}  // namespace sketchcolour::diffusion
