#include "sketchcolour/adapters.hpp"

#include "sketchcolour/errors.hpp"
#include "sketchcolour/random.hpp"

namespace sketchcolour::adapters {

namespace {

std::string component_of(const std::string& name) {
    if (name.find("lora.") != std::string::npos) {
        return "lora";
    }
    const auto dot = name.find('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

void to_json(nlohmann::json& j, const ParamReport& r) {
    j = nlohmann::json{{"totalParams", r.totalParams},
                       {"trainableParams", r.trainableParams},
                       {"breakdown", r.breakdown},
                       {"trainableBreakdown", r.trainableBreakdown}};
}

ParamReport count_trainable(const torch::nn::Module& model) {
    ParamReport report;
    for (const auto& item : model.named_parameters(true)) {
        const int64_t n = item.value().numel();
        const auto component = component_of(item.key());
        report.totalParams += n;
        report.breakdown[component] += n;
        if (item.value().requires_grad()) {
            report.trainableParams += n;
            report.trainableBreakdown[component] += n;
        }
    }
    return report;
}

void inject_lora(dit::DiffusionTransformerImpl& model, const LoraConfig& config, uint64_t seed,
                 bool freezePretrainedSlice) {
    config.validate();
    if (config.targets.empty()) {
        throw ConfigError("LoRA target set is empty");
    }
    if (model.blocks.empty()) {
        std::string missing;
        for (auto t : config.targets) {
            missing += (missing.empty() ? "" : ", ") + std::string(to_string(t));
        }
        throw ConfigError("LoRA targets not found in model: " + missing);
    }
    for (size_t i = 0; i < model.blocks.size(); ++i) {
        for (auto target : config.targets) {
            const auto label = "lora/block" + std::to_string(i) + "/" + std::string(to_string(target));
            model.blocks[i]->target(target)->attach_lora(config.rank, config.scaling(), config.dropout,
                                                         derive_seed(seed, label));
        }
    }
    for (auto& p : model.parameters(true)) {
        p.set_requires_grad(false);
    }
    for (const auto& item : model.named_parameters(true)) {
        if (item.key().find("lora.") != std::string::npos) {
            item.value().set_requires_grad(true);
        }
    }
    auto& embed = *model.patchEmbed;
    embed.bias.set_requires_grad(true);
    for (int64_t s = 0; s < embed.streams(); ++s) {
        const bool sketchSlice = s == embed.streams() - 1 && embed.streams() == 3;
        embed.kernels[s].set_requires_grad(!freezePretrainedSlice || sketchSlice);
    }
}

int64_t lora_layer_count(dit::DiffusionTransformerImpl& model) {
    int64_t n = 0;
    for (auto& block : model.blocks) {
        for (auto target : all_lora_targets()) {
            n += block->target(target)->has_lora() ? 1 : 0;
        }
    }
    return n;
}

void merge_lora(dit::DiffusionTransformerImpl& model) {
    if (lora_layer_count(model) == 0) {
        throw ContractError("model carries no LoRA adapters to merge");
    }
    for (auto& block : model.blocks) {
        for (auto target : all_lora_targets()) {
            auto& layer = block->target(target);
            if (layer->has_lora()) {
                layer->merge();
            }
        }
    }
}

ControlNetBaselineImpl::ControlNetBaselineImpl(dit::DiffusionTransformer base, int64_t branchDepth) {
    const auto& cfg = base->config();
    if (base->streams() != 2) {
        throw ContractError("ControlNet baseline starts from a 2-stream base model");
    }
    if (branchDepth < 1 || branchDepth > cfg.depth) {
        throw ConfigError("branchDepth must lie in [1, " + std::to_string(cfg.depth) + "], got " +
                          std::to_string(branchDepth));
    }
    trunk = register_module("trunk", base);
    for (auto& p : trunk->parameters(true)) {
        p.set_requires_grad(false);
    }
    sketchEmbed = register_module("sketch_embed", dit::PatchEmbed(cfg, 1));
    {
        torch::NoGradGuard guard;
        sketchEmbed->kernels[0].zero_();
        sketchEmbed->bias.zero_();
    }
    branchList_ = register_module("branch", torch::nn::ModuleList());
    connectorList_ = register_module("connectors", torch::nn::ModuleList());
    for (int64_t i = 0; i < branchDepth; ++i) {
        auto block = dit::TransformerBlock(cfg.modelDim, cfg.heads, cfg.ffn_hidden());
        block->copy_from(*trunk->blocks[i]);
        branch.push_back(block);
        branchList_->push_back(block);
        auto connector = torch::nn::Linear(cfg.modelDim, cfg.modelDim);
        {
            torch::NoGradGuard guard;
            connector->weight.zero_();
            connector->bias.zero_();
        }
        connectors.push_back(connector);
        connectorList_->push_back(connector);
    }
}

torch::Tensor ControlNetBaselineImpl::predict(const torch::Tensor& noisy, const torch::Tensor& reference,
                                              const torch::Tensor& sketch, const torch::Tensor& timesteps) {
    if (!sketch.defined()) {
        throw ContractError("ControlNet baseline needs a sketch latent");
    }
    if (noisy.sizes() != reference.sizes() || sketch.sizes() != noisy.sizes()) {
        throw DimensionError("latent streams must share one shape");
    }
    auto tokens = trunk->patchify(torch::cat({noisy, reference}, 1));
    auto cond = trunk->condition(timesteps);
    auto b = tokens.tokens + sketchEmbed(dit::patch_vectors(sketch, trunk->config()));
    std::vector<torch::Tensor> residuals;
    for (size_t k = 0; k < branch.size(); ++k) {
        b = branch[k](b, cond);
        residuals.push_back(connectors[k](b));
    }
    auto h = tokens.tokens;
    for (size_t i = 0; i < trunk->blocks.size(); ++i) {
        if (i < residuals.size()) {
            h = h + residuals[i];
        }
        h = trunk->run_block(i, h, cond);
    }
    return trunk->finish({h, tokens.grid}, cond);
}

ControlNetBaseline build_controlnet_baseline(dit::DiffusionTransformer base, int64_t branchDepth) {
    const int64_t depth = branchDepth == 0 ? base->config().depth : branchDepth;
    return ControlNetBaseline(base, depth);
}

}  // namespace sketchcolour::adapters
