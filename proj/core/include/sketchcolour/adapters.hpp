#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "sketchcolour/config.hpp"
#include "sketchcolour/denoiser.hpp"
#include "sketchcolour/lora_linear.hpp"

namespace sketchcolour::adapters {

struct ParamReport {
    int64_t totalParams = 0;
    int64_t trainableParams = 0;
    std::map<std::string, int64_t> breakdown;           // component -> all parameters
    std::map<std::string, int64_t> trainableBreakdown;  // component -> trainable parameters
};

void to_json(nlohmann::json& j, const ParamReport& r);

/// Parameter census by walking the module tree. Components are the first
/// segment of each parameter name, except LoRA factors which are grouped as "lora".
ParamReport count_trainable(const torch::nn::Module& model);

/// Attaches LoRA factors to every targeted linear map in every block, then
/// freezes everything except the LoRA factors and the patch embedding. With
/// `freezePretrainedSlice` only the last (sketch) kernel slice and the bias of
/// the patch embedding stay trainable.
void inject_lora(dit::DiffusionTransformerImpl& model, const LoraConfig& config, uint64_t seed,
                 bool freezePretrainedSlice = false);

/// Folds every adapter into its base weight. Throws ContractError when the
/// model carries no adapters (never injected or already merged).
void merge_lora(dit::DiffusionTransformerImpl& model);

int64_t lora_layer_count(dit::DiffusionTransformerImpl& model);

/// ControlNet-style baseline: a frozen 2-stream trunk plus a trainable clone of
/// its first `branchDepth` blocks that reads the sketch latent. Branch block k
/// feeds the trunk's block-k input through a zero-initialised linear connector.
class ControlNetBaselineImpl : public torch::nn::Module, public dit::Denoiser {
public:
    ControlNetBaselineImpl(dit::DiffusionTransformer trunk, int64_t branchDepth);

    torch::Tensor predict(const torch::Tensor& noisy, const torch::Tensor& reference, const torch::Tensor& sketch,
                          const torch::Tensor& timesteps) override;
    bool accepts_sketch() const override { return true; }

    int64_t branch_depth() const { return static_cast<int64_t>(branch.size()); }

    dit::DiffusionTransformer trunk{nullptr};
    dit::PatchEmbed sketchEmbed{nullptr};
    std::vector<dit::TransformerBlock> branch;
    std::vector<torch::nn::Linear> connectors;

private:
    torch::nn::ModuleList branchList_;
    torch::nn::ModuleList connectorList_;
};
TORCH_MODULE(ControlNetBaseline);

/// branchDepth 0 means the full trunk depth.
ControlNetBaseline build_controlnet_baseline(dit::DiffusionTransformer base, int64_t branchDepth);

}  // namespace sketchcolour::adapters
