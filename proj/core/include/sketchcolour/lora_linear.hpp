#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace sketchcolour::adapters {

/// Low-rank factors attached to a linear map: delta = scaling * down * up.
class LoraFactorsImpl : public torch::nn::Module {
public:
    LoraFactorsImpl(int64_t inFeatures, int64_t outFeatures, int64_t rank, double scaling, double dropout,
                    uint64_t seed);

    torch::Tensor down;  // inFeatures x rank
    torch::Tensor up;    // rank x outFeatures
    double scaling;
    double dropout;
};
TORCH_MODULE(LoraFactors);

/// Linear layer (y = x W^T + b) that can carry a LoRA adapter.
class LoraLinearImpl : public torch::nn::Module {
public:
    LoraLinearImpl(int64_t inFeatures, int64_t outFeatures);

    torch::Tensor forward(const torch::Tensor& x);

    void attach_lora(int64_t rank, double scaling, double dropout, uint64_t seed);
    bool has_lora() const { return static_cast<bool>(lora); }
    /// Folds the adapter into the weight and removes it; throws ContractError without one.
    void merge();

    int64_t in_features() const { return weight.size(1); }
    int64_t out_features() const { return weight.size(0); }

    torch::Tensor weight;  // out x in
    torch::Tensor bias;    // out
    LoraFactors lora{nullptr};
};
TORCH_MODULE(LoraLinear);

}  // namespace sketchcolour::adapters
