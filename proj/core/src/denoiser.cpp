#include "sketchcolour/denoiser.hpp"

#include <cmath>
#include <string>

#include "sketchcolour/errors.hpp"

namespace sketchcolour::dit {

namespace F = torch::nn::functional;

namespace {

void check_stream(const LatentTensor& base, const LatentTensor& other, const char* name) {
    if (!other.defined()) {
        throw DimensionError(std::string(name) + " stream is empty");
    }
    if (other.frames() != base.frames() || other.height() != base.height() || other.width() != base.width()) {
        throw DimensionError(std::string(name) + " stream geometry " + std::to_string(other.frames()) + "x" +
                             std::to_string(other.height()) + "x" + std::to_string(other.width()) +
                             " disagrees with the noisy stream " + std::to_string(base.frames()) + "x" +
                             std::to_string(base.height()) + "x" + std::to_string(base.width()));
    }
}

void check_divisible(int64_t size, int64_t patch, const char* axis) {
    if (patch < 1 || size % patch != 0) {
        throw DimensionError(std::string("latent ") + axis + " extent " + std::to_string(size) +
                             " is not divisible by patch size " + std::to_string(patch));
    }
}

torch::Tensor adaptive_norm(const torch::Tensor& x, const torch::Tensor& shift, const torch::Tensor& scale) {
    auto h = F::layer_norm(x, F::LayerNormFuncOptions({x.size(-1)}).eps(1e-6));
    return h * (1 + scale) + shift;
}

void require_finite(const torch::Tensor& x, const std::string& where) {
    if (!torch::isfinite(x).all().item<bool>()) {
        throw NumericError("non-finite activation " + where);
    }
}

}  // namespace

LatentTensor concat_streams(const LatentTensor& noisy, const LatentTensor& reference, const LatentTensor& sketch) {
    if (!noisy.defined()) {
        throw DimensionError("noisy stream is empty");
    }
    check_stream(noisy, reference, "reference");
    check_stream(noisy, sketch, "sketch");
    return LatentTensor(torch::cat({noisy.data(), reference.data(), sketch.data()}, 3));
}

Grid token_grid(const DitConfig& config, int64_t latentFrames, int64_t latentHeight, int64_t latentWidth) {
    check_divisible(latentFrames, config.patchT, "frame");
    check_divisible(latentHeight, config.patchH, "height");
    check_divisible(latentWidth, config.patchW, "width");
    return {latentFrames / config.patchT, latentHeight / config.patchH, latentWidth / config.patchW};
}

torch::Tensor patch_vectors(const torch::Tensor& latent, const DitConfig& config, Grid* grid) {
    if (latent.dim() != 5) {
        throw DimensionError("patch_vectors expects [B, C, t, h, w]");
    }
    const auto g = token_grid(config, latent.size(2), latent.size(3), latent.size(4));
    if (grid != nullptr) {
        *grid = g;
    }
    const int64_t b = latent.size(0);
    const int64_t c = latent.size(1);
    return latent.reshape({b, c, g[0], config.patchT, g[1], config.patchH, g[2], config.patchW})
        .permute({0, 2, 4, 6, 1, 3, 5, 7})
        .reshape({b, g[0] * g[1] * g[2], c * config.patch_volume()});
}

torch::Tensor unpatch_vectors(const torch::Tensor& vectors, const Grid& grid, const DitConfig& config,
                              int64_t channels) {
    const int64_t n = grid[0] * grid[1] * grid[2];
    if (vectors.dim() != 3 || vectors.size(1) != n || vectors.size(2) != channels * config.patch_volume()) {
        throw DimensionError("token values do not match grid " + std::to_string(grid[0]) + "x" +
                             std::to_string(grid[1]) + "x" + std::to_string(grid[2]) + " with " +
                             std::to_string(channels) + " channels");
    }
    const int64_t b = vectors.size(0);
    return vectors.reshape({b, grid[0], grid[1], grid[2], channels, config.patchT, config.patchH, config.patchW})
        .permute({0, 4, 1, 5, 2, 6, 3, 7})
        .reshape({b, channels, grid[0] * config.patchT, grid[1] * config.patchH, grid[2] * config.patchW});
}

PatchEmbedImpl::PatchEmbedImpl(const DitConfig& config, int64_t streams)
    : streamWidth_(config.latentChannels * config.patch_volume()),
      latentChannels_(config.latentChannels),
      volume_(config.patch_volume()) {
    if (streams < 1) {
        throw ConfigError("patch embedding needs at least one stream");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(streams * streamWidth_));
    for (int64_t s = 0; s < streams; ++s) {
        auto w = torch::empty({streamWidth_, config.modelDim});
        w.uniform_(-bound, bound);
        kernels.push_back(register_parameter("kernel" + std::to_string(s), w));
    }
    bias = register_parameter("bias", torch::zeros({config.modelDim}));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& vectors) {
    if (vectors.size(-1) != streams() * streamWidth_) {
        throw DimensionError("patch vectors carry " + std::to_string(vectors.size(-1) / std::max<int64_t>(1, streamWidth_)) +
                             " streams, embedding expects " + std::to_string(streams()));
    }
    torch::Tensor acc;
    for (int64_t s = 0; s < streams(); ++s) {
        auto part = torch::matmul(vectors.narrow(-1, s * streamWidth_, streamWidth_).contiguous(), kernels[s]);
        acc = acc.defined() ? acc + part : part;
    }
    return acc + bias;
}

PatchEmbedWeights PatchEmbedImpl::weights() const {
    auto stacked = torch::cat(std::vector<torch::Tensor>(kernels.begin(), kernels.end()), 0).detach().clone();
    return {stacked.reshape({streams() * latentChannels_, volume_, bias.size(0)}), bias.detach().clone()};
}

void PatchEmbedImpl::load(const PatchEmbedWeights& w) {
    const int64_t dim = bias.size(0);
    if (w.kernel.numel() != streams() * streamWidth_ * dim || w.bias.numel() != dim) {
        throw ConfigError("patch embedding weights do not match a " + std::to_string(streams()) +
                          "-stream projection");
    }
    torch::NoGradGuard guard;
    auto flat = w.kernel.reshape({streams() * streamWidth_, dim});
    for (int64_t s = 0; s < streams(); ++s) {
        kernels[s].copy_(flat.narrow(0, s * streamWidth_, streamWidth_));
    }
    bias.copy_(w.bias);
}

PatchEmbedWeights expand_patch_embedding(const PatchEmbedWeights& pretrained, const DitConfig& config) {
    const int64_t lc = config.latentChannels;
    if (!pretrained.kernel.defined() || pretrained.kernel.dim() != 3 || pretrained.kernel.size(0) != 2 * lc ||
        pretrained.kernel.size(1) != config.patch_volume() || pretrained.kernel.size(2) != config.modelDim) {
        throw ConfigError("expansion needs a pretrained projection over exactly " + std::to_string(2 * lc) +
                          " input channels");
    }
    auto zeros = torch::zeros({lc, pretrained.kernel.size(1), pretrained.kernel.size(2)}, pretrained.kernel.options());
    return {torch::cat({pretrained.kernel, zeros}, 0), pretrained.bias.clone()};
}

torch::Tensor timestep_frequencies(const torch::Tensor& timesteps, int64_t dim) {
    const int64_t half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / static_cast<double>(half));
    auto args = timesteps.to(torch::kFloat32).reshape({-1, 1}) * freqs.reshape({1, -1});
    return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

TimestepEmbedderImpl::TimestepEmbedderImpl(int64_t modelDim, int64_t frequencyDim) : frequencyDim_(frequencyDim) {
    fc1_ = register_module("fc1", torch::nn::Linear(frequencyDim, modelDim));
    fc2_ = register_module("fc2", torch::nn::Linear(modelDim, modelDim));
    torch::NoGradGuard guard;
    for (auto* fc : {&fc1_, &fc2_}) {
        (*fc)->weight.normal_(0.0, 0.02);
        (*fc)->bias.zero_();
    }
}

torch::Tensor TimestepEmbedderImpl::forward(const torch::Tensor& timesteps) {
    return fc2_(torch::silu(fc1_(timestep_frequencies(timesteps, frequencyDim_).to(fc1_->weight.scalar_type()))));
}

TransformerBlockImpl::TransformerBlockImpl(int64_t modelDim, int64_t heads, int64_t ffnHidden) : heads_(heads) {
    if (heads < 1 || modelDim % heads != 0) {
        throw ConfigError("modelDim must be divisible by heads");
    }
    q = register_module("q", adapters::LoraLinear(modelDim, modelDim));
    k = register_module("k", adapters::LoraLinear(modelDim, modelDim));
    v = register_module("v", adapters::LoraLinear(modelDim, modelDim));
    o = register_module("o", adapters::LoraLinear(modelDim, modelDim));
    ffnIn = register_module("ffn_in", adapters::LoraLinear(modelDim, ffnHidden));
    ffnOut = register_module("ffn_out", adapters::LoraLinear(ffnHidden, modelDim));
    modulation = register_module("modulation", torch::nn::Linear(modelDim, 6 * modelDim));
    torch::NoGradGuard guard;
    modulation->weight.zero_();
    modulation->bias.zero_();
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
    const int64_t b = x.size(0);
    const int64_t n = x.size(1);
    const int64_t d = x.size(2);
    const int64_t dh = d / heads_;
    auto mod = modulation(torch::silu(cond)).unsqueeze(1).chunk(6, -1);

    auto h = adaptive_norm(x, mod[0], mod[1]);
    auto split = [&](const torch::Tensor& t) { return t.reshape({b, n, heads_, dh}).transpose(1, 2); };
    auto qh = split(q(h));
    auto kh = split(k(h));
    auto vh = split(v(h));
    auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
    auto attn = torch::matmul(torch::softmax(scores, -1), vh).transpose(1, 2).reshape({b, n, d});
    auto y = x + mod[2] * o(attn);

    auto h2 = adaptive_norm(y, mod[3], mod[4]);
    return y + mod[5] * ffnOut(torch::gelu(ffnIn(h2)));
}

adapters::LoraLinear& TransformerBlockImpl::target(LoraTarget which) {
    switch (which) {
        case LoraTarget::attnQ: return q;
        case LoraTarget::attnK: return k;
        case LoraTarget::attnV: return v;
        case LoraTarget::attnO: return o;
        case LoraTarget::ffnIn: return ffnIn;
        case LoraTarget::ffnOut: return ffnOut;
    }
    throw ConfigError("unknown LoRA target");
}

void TransformerBlockImpl::copy_from(TransformerBlockImpl& other) {
    torch::NoGradGuard guard;
    auto src = other.named_parameters(true);
    for (auto& item : named_parameters(true)) {
        const auto* from = src.find(item.key());
        if (from == nullptr) {
            throw ContractError("block copy: missing parameter " + item.key());
        }
        item.value().copy_(*from);
    }
}

DiffusionTransformerImpl::DiffusionTransformerImpl(const DitConfig& config, int64_t streams) : config_(config) {
    config_.streams = streams;
    if (streams != 2 && streams != 3) {
        throw ConfigError("denoiser supports 2 or 3 latent streams");
    }
    const int64_t d = config.modelDim;
    patchEmbed = register_module("patch_embed", PatchEmbed(config, streams));
    posT = register_parameter("pos_t", torch::randn({config.gridT, d}) * 0.02);
    posH = register_parameter("pos_h", torch::randn({config.gridH, d}) * 0.02);
    posW = register_parameter("pos_w", torch::randn({config.gridW, d}) * 0.02);
    timeEmbed = register_module("time_embed", TimestepEmbedder(d));
    blockList_ = register_module("blocks", torch::nn::ModuleList());
    for (int64_t i = 0; i < config.depth; ++i) {
        blocks.push_back(TransformerBlock(d, config.heads, config.ffn_hidden()));
        blockList_->push_back(blocks.back());
    }
    finalModulation = register_module("final_modulation", torch::nn::Linear(d, 2 * d));
    head = register_module("head", torch::nn::Linear(d, config.latentChannels * config.patch_volume()));
    torch::NoGradGuard guard;
    finalModulation->weight.zero_();
    finalModulation->bias.zero_();
    head->weight.zero_();
    head->bias.zero_();
}

torch::Tensor DiffusionTransformerImpl::positional(const Grid& grid) {
    if (grid[0] > posT.size(0) || grid[1] > posH.size(0) || grid[2] > posW.size(0)) {
        throw DimensionError("token grid " + std::to_string(grid[0]) + "x" + std::to_string(grid[1]) + "x" +
                             std::to_string(grid[2]) + " exceeds the positional tables " +
                             std::to_string(posT.size(0)) + "x" + std::to_string(posH.size(0)) + "x" +
                             std::to_string(posW.size(0)));
    }
    const int64_t d = config_.modelDim;
    auto pos = posT.narrow(0, 0, grid[0]).reshape({grid[0], 1, 1, d}) +
               posH.narrow(0, 0, grid[1]).reshape({1, grid[1], 1, d}) +
               posW.narrow(0, 0, grid[2]).reshape({1, 1, grid[2], d});
    return pos.reshape({grid[0] * grid[1] * grid[2], d});
}

TokenSequence DiffusionTransformerImpl::patchify(const torch::Tensor& stacked) {
    if (stacked.dim() != 5 || stacked.size(1) != streams() * config_.latentChannels) {
        throw DimensionError("stacked latent must have " + std::to_string(streams() * config_.latentChannels) +
                             " channels");
    }
    Grid grid{};
    auto vectors = patch_vectors(stacked, config_, &grid);
    return {patchEmbed(vectors) + positional(grid), grid};
}

torch::Tensor DiffusionTransformerImpl::unpatchify(const TokenSequence& tokens) {
    return unpatch_vectors(head(tokens.tokens), tokens.grid, config_, config_.latentChannels);
}

torch::Tensor DiffusionTransformerImpl::condition(const torch::Tensor& timesteps) { return timeEmbed(timesteps); }

torch::Tensor DiffusionTransformerImpl::run_block(size_t index, const torch::Tensor& x, const torch::Tensor& cond) {
    auto y = blocks[index](x, cond);
    require_finite(y, "after block " + std::to_string(index));
    return y;
}

torch::Tensor DiffusionTransformerImpl::finish(const TokenSequence& tokens, const torch::Tensor& cond) {
    auto mod = finalModulation(torch::silu(cond)).unsqueeze(1).chunk(2, -1);
    return unpatchify({adaptive_norm(tokens.tokens, mod[0], mod[1]), tokens.grid});
}

torch::Tensor DiffusionTransformerImpl::predict(const torch::Tensor& noisy, const torch::Tensor& reference,
                                                const torch::Tensor& sketch, const torch::Tensor& timesteps) {
    if (accepts_sketch() && !sketch.defined()) {
        throw ContractError("sketch-conditioned denoiser needs a sketch latent");
    }
    if (!accepts_sketch() && sketch.defined()) {
        throw ContractError("denoiser has no sketch stream; expand it before passing sketches");
    }
    if (noisy.sizes() != reference.sizes() || (sketch.defined() && sketch.sizes() != noisy.sizes())) {
        throw DimensionError("latent streams must share one shape");
    }
    std::vector<torch::Tensor> parts{noisy, reference};
    if (sketch.defined()) {
        parts.push_back(sketch);
    }
    auto tokens = patchify(torch::cat(parts, 1));
    auto cond = condition(timesteps);
    for (size_t i = 0; i < blocks.size(); ++i) {
        tokens.tokens = run_block(i, tokens.tokens, cond);
    }
    return finish(tokens, cond);
}

void DiffusionTransformerImpl::expand_for_sketch() {
    if (streams() != 2) {
        throw ContractError("only a 2-stream denoiser can be expanded");
    }
    auto expanded = PatchEmbed(config_, 3);
    expanded->load(expand_patch_embedding(patchEmbed->weights(), config_));
    patchEmbed = replace_module("patch_embed", expanded);
    config_.streams = 3;
}

LatentTensor forward(Denoiser& model, const LatentTensor& noisy, const LatentTensor& reference,
                     const LatentTensor& sketch, int64_t timestep) {
    auto t = torch::full({1}, static_cast<double>(timestep));
    auto out = model.predict(noisy.to_ncdhw(), reference.to_ncdhw(),
                             sketch.defined() ? sketch.to_ncdhw() : torch::Tensor(), t);
    return LatentTensor::from_ncdhw(out);
}

}  // namespace sketchcolour::dit
