#include "sketchcolour/lora_linear.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "sketchcolour/errors.hpp"

namespace sketchcolour::adapters {

LoraFactorsImpl::LoraFactorsImpl(int64_t inFeatures, int64_t outFeatures, int64_t rank, double scaling_,
                                 double dropout_, uint64_t seed)
    : scaling(scaling_), dropout(dropout_) {
    if (rank < 1) {
        throw ConfigError("LoRA rank must be at least 1");
    }
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(inFeatures));
    auto d = torch::empty({inFeatures, rank});
    d.uniform_(-bound, bound, gen);
    down = register_parameter("down", d);
    up = register_parameter("up", torch::zeros({rank, outFeatures}));
}

LoraLinearImpl::LoraLinearImpl(int64_t inFeatures, int64_t outFeatures) {
    auto w = torch::empty({outFeatures, inFeatures});
    const double limit = std::sqrt(6.0 / static_cast<double>(inFeatures + outFeatures));
    w.uniform_(-limit, limit);
    weight = register_parameter("weight", w);
    bias = register_parameter("bias", torch::zeros({outFeatures}));
}

torch::Tensor LoraLinearImpl::forward(const torch::Tensor& x) {
    auto y = torch::nn::functional::linear(x, weight, bias);
    if (lora) {
        auto h = x;
        if (lora->dropout > 0.0 && is_training()) {
            h = torch::dropout(h, lora->dropout, true);
        }
        y = y + lora->scaling * torch::matmul(torch::matmul(h, lora->down), lora->up);
    }
    return y;
}

void LoraLinearImpl::attach_lora(int64_t rank, double scaling, double dropout, uint64_t seed) {
    if (lora) {
        throw ContractError("layer already carries a LoRA adapter");
    }
    lora = register_module("lora", LoraFactors(in_features(), out_features(), rank, scaling, dropout, seed));
}

void LoraLinearImpl::merge() {
    if (!lora) {
        throw ContractError("no LoRA adapter to merge (already merged or never injected)");
    }
    {
        torch::NoGradGuard guard;
        weight.add_((lora->scaling * torch::matmul(lora->down, lora->up)).t());
    }
    unregister_module("lora");
    lora = nullptr;
}

}  // namespace sketchcolour::adapters
