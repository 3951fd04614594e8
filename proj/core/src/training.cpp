#include "sketchcolour/training.hpp"

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sketchcolour/diffusion.hpp"
#include "sketchcolour/errors.hpp"
#include "sketchcolour/image_io.hpp"
#include "sketchcolour/random.hpp"
#include "sketchcolour/sketcher.hpp"
#include "sketchcolour/stats.hpp"

namespace sketchcolour::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const Log& log, const std::string& message) {
    if (log) {
        log(message);
    }
}

std::vector<int64_t> batch_indices(Rng& rng, int64_t n, int64_t batch) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < batch; ++i) {
        idx.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(n))));
    }
    return idx;
}

torch::Tensor gather(const torch::Tensor& bank, const std::vector<int64_t>& idx) {
    return bank.index_select(0, torch::tensor(idx, torch::kLong));
}

double window_mean(const std::vector<double>& v, bool head) {
    if (v.empty()) {
        return 0.0;
    }
    const size_t n = std::max<size_t>(1, v.size() / 10);
    const auto begin = head ? v.begin() : v.end() - static_cast<std::ptrdiff_t>(n);
    double s = 0.0;
    for (auto it = begin; it != begin + static_cast<std::ptrdiff_t>(n); ++it) {
        s += *it;
    }
    return s / static_cast<double>(n);
}

std::vector<VideoTensor> videos_of(const std::vector<data::LoadedClip>& clips) {
    std::vector<VideoTensor> out;
    for (const auto& c : clips) {
        out.push_back(c.video);
    }
    return out;
}

struct LatentBank {
    torch::Tensor target;
    torch::Tensor reference;
    torch::Tensor sketch;
};

LatentBank encode_bank(vae::VideoVae& vae, const std::vector<data::LoadedClip>& clips, const ExperimentConfig& config,
                       bool withSketch) {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> targets, refs, sketches;
    for (const auto& clip : clips) {
        auto target = vae->encode_batch(clip.video.to_ncdhw(), vae::EncodeMode::mean);
        auto ref = vae->encode_batch(clip.video.frame(0).to_ncdhw(), vae::EncodeMode::mean);
        targets.push_back(target);
        refs.push_back(vae::pad_reference(LatentTensor::from_ncdhw(ref), target.size(2)).to_ncdhw());
        if (withSketch) {
            auto sk = sketch::sketch_video(clip.video, config.sketch);
            sketches.push_back(vae->encode_batch(sk.to_ncdhw(), vae::EncodeMode::mean));
        }
    }
    LatentBank bank{torch::cat(targets), torch::cat(refs), {}};
    if (withSketch) {
        bank.sketch = torch::cat(sketches);
    }
    return bank;
}

ckpt::Checkpoint make_checkpoint(const ExperimentConfig& config, Stage stage, int64_t step, const json& metrics,
                                 ckpt::TensorMap tensors) {
    ckpt::Checkpoint ck;
    ck.meta.configHash = config_hash(config, stage);
    ck.meta.stage = stage;
    ck.meta.step = step;
    ck.meta.metricsSnapshot = metrics;
    ck.meta.config = config;
    ck.tensors = std::move(tensors);
    return ck;
}

ckpt::Checkpoint require_checkpoint(const fs::path& path, Stage stage, const ExperimentConfig& config) {
    if (!fs::exists(path)) {
        throw ContractError("missing " + std::string(to_string(stage)) + " checkpoint " + path.string());
    }
    return ckpt::load_checked(path, stage, config_hash(config, stage));
}

fs::path adapter_path(const fs::path& checkpoint) {
    auto p = checkpoint;
    p.replace_extension(".adapter.ckpt");
    return p;
}

torch::Tensor random_latent(const ExperimentConfig& config, at::Generator& gen) {
    const auto shape = vae::latent_shape(config.vae, config.data.frames, config.data.height, config.data.width);
    return torch::randn({1, config.vae.latentChannels, shape[0], shape[1], shape[2]}, gen);
}

dit::DiffusionTransformer clone_base(const ExperimentConfig& config, dit::DiffusionTransformer& base) {
    dit::DiffusionTransformer copy(config.dit, 2);
    ckpt::load_state(*copy, ckpt::state_of(*base));
    return copy;
}

SamplerConfig clip_sampler(const ExperimentConfig& config, const std::string& clipId) {
    SamplerConfig s = config.sampler;
    s.seed = derive_seed(config.sampler.seed ^ config.rootSeed, "sample/" + clipId);
    return s;
}

}  // namespace

Workspace::Workspace(fs::path root) : root_(std::move(root)) {}

fs::path Workspace::data_dir(const ExperimentConfig& config) const {
    return root_ / "data" / ("corpus-" + data_hash(config));
}

fs::path Workspace::checkpoint_path(const ExperimentConfig& config, Stage stage) const {
    return root_ / "checkpoints" / (std::string(to_string(stage)) + "-" + config_hash(config, stage) + ".ckpt");
}

fs::path Workspace::run_dir(const std::string& name) const { return root_ / "runs" / name; }

fs::path default_workspace_root() {
    if (const char* env = std::getenv("SKETCHCOLOUR_CACHE"); env != nullptr && *env != '\0') {
        return fs::path(env);
    }
    return fs::current_path() / "sketchcolour-cache";
}

namespace {

std::string timing_key(const ExperimentConfig& config, Stage stage) {
    return std::string(to_string(stage)) + "-" + config_hash(config, stage);
}

json read_timings(const Workspace& ws) {
    std::ifstream in(ws.root() / "timings.json");
    if (!in) {
        return json::object();
    }
    auto j = json::parse(in, nullptr, false);
    return j.is_object() ? j : json::object();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void record_timing(const Workspace& ws, const ExperimentConfig& config, Stage stage, double seconds) {
    auto j = read_timings(ws);
    j[timing_key(config, stage)] = seconds;
    fs::create_directories(ws.root());
    std::ofstream out(ws.root() / "timings.json");
    out << j.dump(2) << "\n";
}

std::optional<double> recorded_timing(const Workspace& ws, const ExperimentConfig& config, Stage stage) {
    const auto j = read_timings(ws);
    const auto key = timing_key(config, stage);
    if (!j.contains(key) || !j[key].is_number()) {
        return std::nullopt;
    }
    return j[key].get<double>();
}

std::string data_hash(const ExperimentConfig& config) {
    const json full = config;
    return fnv1a_hex(json{{"rootSeed", full["rootSeed"]}, {"data", full["data"]}}.dump());
}

GenDataResult gen_data(const ExperimentConfig& config, const fs::path& dataRoot, bool force, const Log& log) {
    const fs::path stamp = dataRoot / "corpus.json";
    const std::string hash = data_hash(config);
    GenDataResult result;
    if (fs::exists(dataRoot) && !fs::is_empty(dataRoot)) {
        bool same = false;
        if (fs::exists(stamp)) {
            std::ifstream in(stamp);
            const auto j = json::parse(in, nullptr, false);
            same = !j.is_discarded() && j.value("dataHash", "") == hash;
        }
        if (!same && !force) {
            throw ContractError("a different corpus already exists at " + dataRoot.string() +
                                "; pass --force to replace it");
        }
        if (!same) {
            fs::remove_all(dataRoot);
            result.replaced = true;
        }
    }
    say(log, "rendering " + std::to_string(config.data.trainClips) + " train and " +
                 std::to_string(config.data.testClips) + " test clips into " + dataRoot.string());
    result.records = data::write_corpus(config, dataRoot);
    const json full = config;
    std::ofstream out(stamp);
    out << json{{"dataHash", hash}, {"rootSeed", config.rootSeed}, {"data", full["data"]}}.dump(2) << "\n";
    return result;
}

fs::path ensure_data(const ExperimentConfig& config, const Workspace& ws, const Log& log) {
    const auto dir = ws.data_dir(config);
    const fs::path stamp = dir / "corpus.json";
    if (fs::exists(stamp) && fs::exists(data::manifest_path(dir))) {
        std::ifstream in(stamp);
        const auto j = json::parse(in, nullptr, false);
        if (!j.is_discarded() && j.value("dataHash", "") == data_hash(config)) {
            return dir;
        }
    }
    gen_data(config, dir, false, log);
    return dir;
}

int64_t heap_in_use() {
    const auto info = mallinfo2();
    return static_cast<int64_t>(info.uordblks + info.hblkhd);
}

OptimiseResult optimise(const std::vector<torch::Tensor>& params, const OptimConfig& options,
                        const std::function<torch::Tensor(int64_t)>& lossAt, const std::string& tag, const Log& log,
                        const std::function<void()>& onDiverge) {
    std::vector<torch::Tensor> trainable;
    for (const auto& p : params) {
        if (p.requires_grad()) {
            trainable.push_back(p);
        }
    }
    if (trainable.empty()) {
        throw ContractError(tag + ": nothing to train");
    }
    torch::optim::AdamW opt(trainable, torch::optim::AdamWOptions(options.learningRate)
                                           .betas({options.beta1, options.beta2})
                                           .weight_decay(options.weightDecay)
                                           .eps(1e-8));
    auto snapshot = [&] {
        std::vector<torch::Tensor> s;
        for (const auto& p : trainable) {
            s.push_back(p.detach().clone());
        }
        return s;
    };
    auto lastGood = snapshot();
    OptimiseResult result;
    const int64_t baseline = heap_in_use();
    for (int64_t step = 0; step < options.steps; ++step) {
        double lr = options.learningRate;
        if (options.warmupSteps > 0) {
            lr *= std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(options.warmupSteps));
        }
        for (auto& group : opt.param_groups()) {
            static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
        }
        opt.zero_grad();
        auto loss = lossAt(step);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            {
                torch::NoGradGuard guard;
                for (size_t i = 0; i < trainable.size(); ++i) {
                    trainable[i].copy_(lastGood[i]);
                }
            }
            if (onDiverge) {
                onDiverge();
            }
            throw NumericError(tag + ": loss became non-finite at step " + std::to_string(step));
        }
        loss.backward();
        result.peakBytes = std::max(result.peakBytes, heap_in_use() - baseline);
        if (options.gradClip > 0.0) {
            torch::nn::utils::clip_grad_norm_(trainable, options.gradClip);
        }
        opt.step();
        result.losses.push_back(value);
        const bool report = options.logEvery > 0 && ((step + 1) % options.logEvery == 0 || step + 1 == options.steps);
        if (report) {
            const int64_t window = std::min<int64_t>(options.logEvery, static_cast<int64_t>(result.losses.size()));
            double avg = 0.0;
            for (int64_t i = 0; i < window; ++i) {
                avg += result.losses[result.losses.size() - 1 - static_cast<size_t>(i)];
            }
            std::ostringstream msg;
            msg << tag << " step " << (step + 1) << "/" << options.steps << " loss " << avg / static_cast<double>(window);
            say(log, msg.str());
            lastGood = snapshot();
        }
    }
    return result;
}

torch::Tensor downsample_sketch(const VideoTensor& sketches, const VaeConfig& vae) {
    const auto shape = vae::latent_shape(vae, sketches.frames(), sketches.height(), sketches.width());
    auto plane = sketches.data().select(-1, 0).to(torch::kFloat64);
    std::vector<torch::Tensor> frames;
    for (int64_t j = 0; j < shape[0]; ++j) {
        auto group = j == 0 ? plane.narrow(0, 0, 1) : plane.narrow(0, 1 + (j - 1) * vae.temporalFactor, vae.temporalFactor);
        frames.push_back(group.mean(0));
    }
    auto stacked = torch::stack(frames).unsqueeze(1);
    return torch::avg_pool2d(stacked, vae.spatialFactor).squeeze(1);
}

double sketch_latent_correlation(vae::VideoVae& vae, const std::vector<VideoTensor>& clips,
                                 const ExperimentConfig& config) {
    torch::NoGradGuard guard;
    std::vector<double> values;
    for (const auto& clip : clips) {
        const auto sk = sketch::sketch_video(clip, config.sketch);
        const auto latent = vae::encode(vae, sk);
        auto target = downsample_sketch(sk, config.vae).flatten().contiguous();
        try {
            const auto pca = vae::pca_channel_projection(latent, 1);
            auto scores = pca.scores.select(1, 0).contiguous();
            std::vector<double> a(scores.data_ptr<double>(), scores.data_ptr<double>() + scores.numel());
            std::vector<double> b(target.data_ptr<double>(), target.data_ptr<double>() + target.numel());
            values.push_back(std::abs(stats::pearson(a, b)));
        } catch (const DegenerateInputError&) {
            // blank sketch or collapsed latent: no defined correlation for this clip
        }
    }
    if (values.empty()) {
        throw DegenerateInputError("no clip produced a defined sketch/latent correlation");
    }
    return stats::mean(values);
}

vae::VideoVae load_vae(const ExperimentConfig& config, const fs::path& checkpoint) {
    const auto ck = require_checkpoint(checkpoint, Stage::vae, config);
    vae::VideoVae model(config.vae);
    ckpt::load_state(*model, ck.tensors);
    model->eval();
    for (auto& p : model->parameters()) {
        p.set_requires_grad(false);
    }
    return model;
}

dit::DiffusionTransformer load_base(const ExperimentConfig& config, const fs::path& checkpoint) {
    const auto ck = require_checkpoint(checkpoint, Stage::baseA, config);
    dit::DiffusionTransformer model(config.dit, 2);
    ckpt::load_state(*model, ck.tensors);
    model->eval();
    return model;
}

void prepare_sketch_model(dit::DiffusionTransformer& model, const ExperimentConfig& config) {
    model->expand_for_sketch();
    adapters::inject_lora(*model, config.lora, derive_seed(config.rootSeed, "lora/init"),
                          config.trainSketch.freezePretrainedPatchSlice);
}

dit::DiffusionTransformer load_sketch_model(const ExperimentConfig& config, const fs::path& checkpoint) {
    const auto ck = require_checkpoint(checkpoint, Stage::sketchB, config);
    dit::DiffusionTransformer model(config.dit, 2);
    prepare_sketch_model(model, config);
    ckpt::load_state(*model, ck.tensors);
    model->eval();
    return model;
}

dit::DiffusionTransformer load_sketch_from_adapter(const ExperimentConfig& config, const fs::path& baseCheckpoint,
                                                   const fs::path& adapterCheckpoint) {
    auto model = load_base(config, baseCheckpoint);
    prepare_sketch_model(model, config);
    const auto adapter = require_checkpoint(adapterCheckpoint, Stage::sketchB, config);
    ckpt::load_state(*model, adapter.tensors, false);
    model->eval();
    return model;
}

StageResult train_vae(const ExperimentConfig& config, const Workspace& ws, const Log& log) {
    const auto start = std::chrono::steady_clock::now();
    const auto dataRoot = ensure_data(config, ws, log);
    const auto train = data::load_split(config, dataRoot, data::Split::train, config.data.trainClips);
    const auto test = data::load_split(config, dataRoot, data::Split::test, config.data.testClips);
    const auto path = ws.checkpoint_path(config, Stage::vae);

    torch::manual_seed(derive_seed(config.rootSeed, "vae/init"));
    vae::VideoVae model(config.vae);
    model->train();
    Rng batches(derive_seed(config.rootSeed, "vae/batches"));
    const uint64_t noiseSeed = derive_seed(config.rootSeed, "vae/noise");
    auto lossAt = [&](int64_t step) {
        std::vector<torch::Tensor> parts;
        for (auto i : batch_indices(batches, static_cast<int64_t>(train.size()), config.trainVae.batchSize)) {
            parts.push_back(train[static_cast<size_t>(i)].video.to_ncdhw());
        }
        return vae::vae_loss(model, torch::cat(parts), derive_seed(noiseSeed, static_cast<uint64_t>(step))).total;
    };
    auto onDiverge = [&] {
        ckpt::save(path, make_checkpoint(config, Stage::vae, 0, json{{"diverged", true}}, ckpt::state_of(*model)));
    };
    say(log, "training VAE for " + std::to_string(config.trainVae.steps) + " steps");
    const auto opt = optimise(model->parameters(), config.trainVae, lossAt, "vae", log, onDiverge);
    model->eval();

    torch::NoGradGuard guard;
    const size_t statClips = std::min<size_t>(train.size(), 64);
    std::vector<torch::Tensor> means;
    for (size_t i = 0; i < statClips; ++i) {
        means.push_back(model->posterior(train[i].video.to_ncdhw()).mean.flatten());
    }
    const double sd = torch::cat(means).std().item<double>();
    model->set_latent_scale(sd > 1e-8 ? 1.0 / sd : 1.0);

    double mae = 0.0;
    for (const auto& clip : test) {
        const auto rec = vae::decode(model, vae::encode(model, clip.video));
        mae += (rec.data() - clip.video.data()).abs().mean().item<double>();
    }
    mae /= static_cast<double>(std::max<size_t>(1, test.size()));

    std::vector<VideoTensor> validation;
    for (size_t i = 0; i < std::min<size_t>(train.size(), 32); ++i) {
        validation.push_back(train[i].video);
    }
    const double corr = sketch_latent_correlation(model, validation, config);

    json metrics{{"heldOutMae", mae},
                 {"sketchLatentCorrelation", corr},
                 {"latentScale", model->latent_scale()},
                 {"lossStart", window_mean(opt.losses, true)},
                 {"lossEnd", window_mean(opt.losses, false)}};
    ckpt::save(path, make_checkpoint(config, Stage::vae, config.trainVae.steps, metrics, ckpt::state_of(*model)));
    record_timing(ws, config, Stage::vae, seconds_since(start));
    say(log, "VAE checkpoint " + path.string() + " " + metrics.dump());
    return {path, metrics, opt.losses, false};
}

StageResult train_base(const ExperimentConfig& config, const Workspace& ws, const Log& log) {
    const auto start = std::chrono::steady_clock::now();
    const auto dataRoot = ensure_data(config, ws, log);
    auto vae = load_vae(config, ws.checkpoint_path(config, Stage::vae));
    const auto train = data::load_split(config, dataRoot, data::Split::train, config.data.trainClips);
    const auto bank = encode_bank(vae, train, config, false);
    const auto path = ws.checkpoint_path(config, Stage::baseA);
    const diffusion::NoiseSchedule schedule(config.schedule);

    torch::manual_seed(derive_seed(config.rootSeed, "base/init"));
    dit::DiffusionTransformer model(config.dit, 2);
    model->train();
    Rng batches(derive_seed(config.rootSeed, "base/batches"));
    const uint64_t noiseSeed = derive_seed(config.rootSeed, "base/noise");
    auto lossAt = [&](int64_t step) {
        const auto idx = batch_indices(batches, bank.target.size(0), config.trainBase.batchSize);
        return diffusion::latent_loss(*model, gather(bank.target, idx), gather(bank.reference, idx), {}, schedule,
                                      derive_seed(noiseSeed, static_cast<uint64_t>(step)));
    };
    auto onDiverge = [&] {
        ckpt::save(path, make_checkpoint(config, Stage::baseA, 0, json{{"diverged", true}}, ckpt::state_of(*model)));
    };
    say(log, "training Stage-A base for " + std::to_string(config.trainBase.steps) + " steps");
    const auto opt = optimise(model->parameters(), config.trainBase, lossAt, "base", log, onDiverge);
    json metrics{{"lossStart", window_mean(opt.losses, true)}, {"lossEnd", window_mean(opt.losses, false)}};
    ckpt::save(path, make_checkpoint(config, Stage::baseA, config.trainBase.steps, metrics, ckpt::state_of(*model)));
    record_timing(ws, config, Stage::baseA, seconds_since(start));
    say(log, "Stage-A checkpoint " + path.string() + " " + metrics.dump());
    return {path, metrics, opt.losses, false};
}

StageResult finetune_sketch(const ExperimentConfig& config, const Workspace& ws, const fs::path& baseCheckpoint,
                            const Log& log) {
    const auto start = std::chrono::steady_clock::now();
    const auto baseCk = ckpt::load(baseCheckpoint);
    if (baseCk.meta.stage != Stage::baseA) {
        throw ContractError("finetune-sketch needs a baseA checkpoint, got stage " +
                            std::string(to_string(baseCk.meta.stage)));
    }
    if (baseCk.meta.configHash != config_hash(config, Stage::baseA)) {
        throw ContractError("base checkpoint config hash " + baseCk.meta.configHash + " does not match " +
                            config_hash(config, Stage::baseA));
    }
    const auto dataRoot = ensure_data(config, ws, log);
    auto vae = load_vae(config, ws.checkpoint_path(config, Stage::vae));
    const auto train = data::load_split(config, dataRoot, data::Split::train, config.data.trainClips);
    const auto bank = encode_bank(vae, train, config, true);
    const auto path = ws.checkpoint_path(config, Stage::sketchB);
    const diffusion::NoiseSchedule schedule(config.schedule);

    dit::DiffusionTransformer model(config.dit, 2);
    ckpt::load_state(*model, baseCk.tensors);
    model->eval();
    torch::Tensor before;
    auto probeT = torch::full({1}, static_cast<double>(schedule.steps() / 2));
    {
        torch::NoGradGuard guard;
        before = model->predict(bank.target.narrow(0, 0, 1), bank.reference.narrow(0, 0, 1), {}, probeT);
    }
    prepare_sketch_model(model, config);
    {
        torch::NoGradGuard guard;
        auto after = model->predict(bank.target.narrow(0, 0, 1), bank.reference.narrow(0, 0, 1),
                                    bank.sketch.narrow(0, 0, 1), probeT);
        if (!torch::equal(before, after)) {
            throw ContractError("expanded model output differs from the base model before training");
        }
    }
    const auto report = adapters::count_trainable(*model);
    say(log, "trainable parameters: " + json(report).dump());

    model->train();
    Rng batches(derive_seed(config.rootSeed, "sketch/batches"));
    const uint64_t noiseSeed = derive_seed(config.rootSeed, "sketch/noise");
    auto lossAt = [&](int64_t step) {
        const auto idx = batch_indices(batches, bank.target.size(0), config.trainSketch.batchSize);
        return diffusion::latent_loss(*model, gather(bank.target, idx), gather(bank.reference, idx),
                                      gather(bank.sketch, idx), schedule,
                                      derive_seed(noiseSeed, static_cast<uint64_t>(step)));
    };
    auto onDiverge = [&] {
        ckpt::save(path, make_checkpoint(config, Stage::sketchB, 0, json{{"diverged", true}}, ckpt::state_of(*model)));
    };
    say(log, "fine-tuning Stage-B for " + std::to_string(config.trainSketch.steps) + " steps");
    const auto opt = optimise(model->parameters(), config.trainSketch, lossAt, "sketch", log, onDiverge);
    model->eval();
    json metrics{{"lossStart", window_mean(opt.losses, true)},
                 {"lossEnd", window_mean(opt.losses, false)},
                 {"params", report}};
    ckpt::save(path, make_checkpoint(config, Stage::sketchB, config.trainSketch.steps, metrics, ckpt::state_of(*model)));
    ckpt::save(adapter_path(path), make_checkpoint(config, Stage::sketchB, config.trainSketch.steps, metrics,
                                                   ckpt::trainable_state(*model)));
    record_timing(ws, config, Stage::sketchB, seconds_since(start));
    say(log, "Stage-B checkpoint " + path.string() + " " + metrics.dump());
    return {path, metrics, opt.losses, false};
}

StageResult ensure_vae(const ExperimentConfig& config, const Workspace& ws, const Log& log) {
    const auto path = ws.checkpoint_path(config, Stage::vae);
    if (fs::exists(path)) {
        const auto ck = ckpt::load_checked(path, Stage::vae, config_hash(config, Stage::vae));
        if (!ck.meta.metricsSnapshot.value("diverged", false)) {
            return {path, ck.meta.metricsSnapshot, {}, true};
        }
    }
    return train_vae(config, ws, log);
}

StageResult ensure_base(const ExperimentConfig& config, const Workspace& ws, const Log& log) {
    ensure_vae(config, ws, log);
    const auto path = ws.checkpoint_path(config, Stage::baseA);
    if (fs::exists(path)) {
        const auto ck = ckpt::load_checked(path, Stage::baseA, config_hash(config, Stage::baseA));
        if (!ck.meta.metricsSnapshot.value("diverged", false)) {
            return {path, ck.meta.metricsSnapshot, {}, true};
        }
    }
    return train_base(config, ws, log);
}

StageResult ensure_sketch(const ExperimentConfig& config, const Workspace& ws, const Log& log) {
    const auto base = ensure_base(config, ws, log);
    const auto path = ws.checkpoint_path(config, Stage::sketchB);
    if (fs::exists(path)) {
        const auto ck = ckpt::load_checked(path, Stage::sketchB, config_hash(config, Stage::sketchB));
        if (!ck.meta.metricsSnapshot.value("diverged", false)) {
            return {path, ck.meta.metricsSnapshot, {}, true};
        }
    }
    return finetune_sketch(config, ws, base.checkpoint, log);
}

HeldOutComparison held_out_comparison(const ExperimentConfig& config, const Workspace& ws, int64_t clips,
                                      const Log& log) {
    const auto sketchStage = ensure_sketch(config, ws, log);
    auto vae = load_vae(config, ws.checkpoint_path(config, Stage::vae));
    auto base = load_base(config, ws.checkpoint_path(config, Stage::baseA));
    auto sketchModel = load_sketch_model(config, sketchStage.checkpoint);
    const auto dataRoot = ensure_data(config, ws, log);
    const auto test = data::load_split(config, dataRoot, data::Split::test, clips > 0 ? clips : config.data.testClips);
    const diffusion::NoiseSchedule schedule(config.schedule);

    HeldOutComparison out;
    std::vector<metrics::ClipPair> pairsA, pairsB;
    for (const auto& clip : test) {
        const auto example = data::make_training_example(clip.video, config.sketch);
        const auto sampler = clip_sampler(config, clip.record.clipId);
        auto predA = diffusion::sample_without_sketch(*base, vae, example.reference, clip.video.frames(), schedule,
                                                      sampler);
        auto predB = diffusion::sample(*sketchModel, vae, example.reference, example.sketches, schedule, sampler);
        out.stageBFrameMsce.push_back(metrics::msce_per_frame(predB, example.groundTruth, config.eval.msceMode));
        pairsA.push_back({clip.record.clipId, predA, example.groundTruth});
        pairsB.push_back({clip.record.clipId, predB, example.groundTruth});
        say(log, "sampled held-out clip " + clip.record.clipId);
    }
    out.stageA = metrics::evaluate_pairs(pairsA, config.eval);
    out.stageB = metrics::evaluate_pairs(pairsB, config.eval);
    return out;
}

void to_json(json& j, const VariantReport& r) {
    j = json{{"name", r.name},
             {"params", r.params},
             {"peakTrainingBytes", r.peakBytes},
             {"steps", r.steps},
             {"heldOutMsce", r.heldOutMsce},
             {"heldOutSsim", r.heldOutSsim}};
}

void to_json(json& j, const CompareReport& r) {
    j = json{{"variants", r.variants}, {"trainableParamRatio", r.paramRatio}, {"zeroInitHolds", r.zeroInitHolds}};
}

std::string loss_curves_csv(const CompareReport& report) {
    std::ostringstream out;
    out << "step";
    size_t rows = 0;
    for (const auto& v : report.variants) {
        out << "," << v.name;
        rows = std::max(rows, v.losses.size());
    }
    out << "\n";
    for (size_t i = 0; i < rows; ++i) {
        out << i;
        for (const auto& v : report.variants) {
            out << ",";
            if (i < v.losses.size()) {
                out << v.losses[i];
            }
        }
        out << "\n";
    }
    return out.str();
}

namespace {

struct Variants {
    dit::DiffusionTransformer lora{nullptr};
    adapters::ControlNetBaseline controlnet{nullptr};
    bool zeroInit = false;
};

Variants build_variants(const ExperimentConfig& config, dit::DiffusionTransformer& base) {
    Variants v;
    v.lora = clone_base(config, base);
    prepare_sketch_model(v.lora, config);
    auto trunk = clone_base(config, base);
    v.controlnet = adapters::build_controlnet_baseline(trunk, config.trainSketch.controlnetBranchDepth);

    torch::NoGradGuard guard;
    base->eval();
    v.lora->eval();
    v.controlnet->eval();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(config.rootSeed, "compare/zero-init"));
    auto noisy = random_latent(config, gen);
    auto ref = random_latent(config, gen);
    auto t = torch::full({1}, static_cast<double>(config.schedule.steps / 2));
    const auto expected = base->predict(noisy, ref, {}, t);
    bool holds = true;
    for (int i = 0; i < 4; ++i) {
        auto sketch = random_latent(config, gen);
        holds = holds && torch::equal(v.lora->predict(noisy, ref, sketch, t), expected);
        holds = holds && torch::equal(v.controlnet->predict(noisy, ref, sketch, t), expected);
    }
    v.zeroInit = holds;
    return v;
}

}  // namespace

CompareReport compare_census(const ExperimentConfig& config, dit::DiffusionTransformer base) {
    auto v = build_variants(config, base);
    CompareReport report;
    report.zeroInitHolds = v.zeroInit;
    report.variants.push_back({"channelConcatLora", adapters::count_trainable(*v.lora)});
    report.variants.push_back({"controlnetBaseline", adapters::count_trainable(*v.controlnet)});
    report.paramRatio = static_cast<double>(report.variants[1].params.trainableParams) /
                        static_cast<double>(report.variants[0].params.trainableParams);
    return report;
}

CompareReport compare(const ExperimentConfig& config, const Workspace& ws, const fs::path& baseCheckpoint,
                      int64_t evalClips, const Log& log) {
    auto base = load_base(config, baseCheckpoint);
    auto v = build_variants(config, base);
    const auto dataRoot = ensure_data(config, ws, log);
    auto vae = load_vae(config, ws.checkpoint_path(config, Stage::vae));
    const auto train = data::load_split(config, dataRoot, data::Split::train, config.data.trainClips);
    const auto bank = encode_bank(vae, train, config, true);
    const auto test = data::load_split(config, dataRoot, data::Split::test,
                                       evalClips > 0 ? evalClips : config.data.testClips);
    const diffusion::NoiseSchedule schedule(config.schedule);

    CompareReport report;
    report.zeroInitHolds = v.zeroInit;
    auto run = [&](const std::string& name, torch::nn::Module& module, dit::Denoiser& denoiser) {
        VariantReport r;
        r.name = name;
        r.params = adapters::count_trainable(module);
        module.train();
        Rng batches(derive_seed(config.rootSeed, "sketch/batches"));
        const uint64_t noiseSeed = derive_seed(config.rootSeed, "sketch/noise");
        auto lossAt = [&](int64_t step) {
            const auto idx = batch_indices(batches, bank.target.size(0), config.trainSketch.batchSize);
            return diffusion::latent_loss(denoiser, gather(bank.target, idx), gather(bank.reference, idx),
                                          gather(bank.sketch, idx), schedule,
                                          derive_seed(noiseSeed, static_cast<uint64_t>(step)));
        };
        const auto opt = optimise(module.parameters(), config.trainSketch, lossAt, name, log);
        module.eval();
        r.losses = opt.losses;
        r.peakBytes = opt.peakBytes;
        r.steps = static_cast<int64_t>(opt.losses.size());
        std::vector<metrics::ClipPair> pairs;
        for (const auto& clip : test) {
            const auto example = data::make_training_example(clip.video, config.sketch);
            pairs.push_back({clip.record.clipId,
                             diffusion::sample(denoiser, vae, example.reference, example.sketches, schedule,
                                               clip_sampler(config, clip.record.clipId)),
                             example.groundTruth});
        }
        const auto m = metrics::evaluate_pairs(pairs, config.eval);
        r.heldOutMsce = m.aggregate.at("msce").mean;
        r.heldOutSsim = m.aggregate.at("ssim").mean;
        say(log, name + " held-out MSCE " + std::to_string(r.heldOutMsce) + " SSIM " + std::to_string(r.heldOutSsim));
        report.variants.push_back(r);
    };
    run("channelConcatLora", *v.lora, *v.lora);
    run("controlnetBaseline", *v.controlnet, *v.controlnet);
    report.paramRatio = static_cast<double>(report.variants[1].params.trainableParams) /
                        static_cast<double>(report.variants[0].params.trainableParams);
    ckpt::save(ws.checkpoint_path(config, Stage::controlnetB),
               make_checkpoint(config, Stage::controlnetB, config.trainSketch.steps, json(report.variants[1]),
                               ckpt::state_of(*v.controlnet)));
    return report;
}

InferResult infer(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& vaeCheckpoint,
                  const fs::path& referencePng, const fs::path& sketchDir, const fs::path& outDir,
                  const SamplerConfig& sampler, const Log& log) {
    const auto ck = ckpt::load(checkpoint);
    if (ck.meta.stage != Stage::sketchB && ck.meta.stage != Stage::controlnetB) {
        throw ContractError("checkpoint stage " + std::string(to_string(ck.meta.stage)) +
                            " cannot colourise sketches; use a sketchB or controlnetB checkpoint");
    }
    if (ck.meta.configHash != config_hash(config, ck.meta.stage)) {
        throw ContractError("checkpoint config hash " + ck.meta.configHash + " does not match the current config " +
                            config_hash(config, ck.meta.stage));
    }
    auto vae = load_vae(config, vaeCheckpoint);
    InferResult result;
    result.outDir = outDir;

    auto reference = VideoTensor(io::read_png(referencePng).unsqueeze(0));
    auto sketches = io::read_frame_dir(sketchDir);
    const int64_t h = config.data.height;
    const int64_t w = config.data.width;
    if (reference.height() != h || reference.width() != w || sketches.height() != h || sketches.width() != w) {
        say(log, "notice: resizing inputs to " + std::to_string(h) + "x" + std::to_string(w) + " by fill-and-crop");
        reference = data::fill_and_crop(reference, h, w);
        sketches = data::fill_and_crop(sketches, h, w);
        result.resized = true;
    }
    if (!sketch::is_binary(sketches.data())) {
        say(log, "warning: sketch frames are not binary; binarizing at " +
                     std::to_string(config.sketch.binarizeThreshold));
        sketches = VideoTensor(sketch::binarize(sketches.data(), config.sketch.binarizeThreshold));
        result.binarized = true;
    }
    const diffusion::NoiseSchedule schedule(config.schedule);
    VideoTensor out;
    if (ck.meta.stage == Stage::sketchB) {
        dit::DiffusionTransformer model(config.dit, 2);
        prepare_sketch_model(model, config);
        ckpt::load_state(*model, ck.tensors);
        model->eval();
        out = diffusion::sample(*model, vae, reference, sketches, schedule, sampler);
    } else {
        dit::DiffusionTransformer trunk(config.dit, 2);
        auto model = adapters::build_controlnet_baseline(trunk, config.trainSketch.controlnetBranchDepth);
        ckpt::load_state(*model, ck.tensors);
        model->eval();
        out = diffusion::sample(*model, vae, reference, sketches, schedule, sampler);
    }
    io::write_frame_dir(outDir, out);
    result.frames = out.frames();
    std::ofstream sidecar(outDir / "infer.json");
    sidecar << json{{"configHash", ck.meta.configHash},
                    {"stage", std::string(to_string(ck.meta.stage))},
                    {"seed", sampler.seed},
                    {"numInferenceSteps", sampler.numInferenceSteps},
                    {"eta", sampler.eta},
                    {"checkpoint", checkpoint.string()},
                    {"binarized", result.binarized},
                    {"resized", result.resized}}
                   .dump(2)
            << "\n";
    return result;
}

VizResult viz_latents(const ExperimentConfig& config, const fs::path& vaeCheckpoint, const fs::path& clipDir,
                      const fs::path& outDir, const Log& log) {
    const auto ck = require_checkpoint(vaeCheckpoint, Stage::vae, config);
    if (ck.meta.step == 0) {
        say(log, "warning: VAE checkpoint is untrained; visualisation still produced");
    }
    auto vae = load_vae(config, vaeCheckpoint);
    auto clip = io::read_frame_dir(clipDir);
    if (clip.height() != config.data.height || clip.width() != config.data.width) {
        clip = data::fill_and_crop(clip, config.data.height, config.data.width);
    }
    const int64_t tf = config.vae.temporalFactor;
    const int64_t usable = 1 + (clip.frames() - 1) / tf * tf;
    if (usable != clip.frames()) {
        say(log, "notice: using the first " + std::to_string(usable) + " frames to fit the temporal stride");
        clip = clip.slice(0, usable);
    }
    torch::NoGradGuard guard;
    const auto sk = sketch::sketch_video(clip, config.sketch);
    const auto colourPca = vae::pca_channel_projection(vae::encode(vae, clip), 3);
    const auto sketchPca = vae::pca_channel_projection(vae::encode(vae, sk), 3);
    io::write_frames(outDir, colourPca.images, 0, "colour_");
    io::write_frames(outDir, sketchPca.images, 0, "sketch_");
    VizResult result;
    result.latentFrames = colourPca.images.size(0);
    result.correlation = sketch_latent_correlation(vae, {clip}, config);
    for (int64_t i = 0; i < result.latentFrames; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%05lld.png", static_cast<long long>(i));
        result.files.push_back(outDir / ("colour_" + std::string(name)));
        result.files.push_back(outDir / ("sketch_" + std::string(name)));
    }
    std::ofstream summary(outDir / "viz.json");
    summary << json{{"latentFrames", result.latentFrames},
                    {"sketchLatentCorrelation", result.correlation},
                    {"recordedCorrelation", ck.meta.metricsSnapshot.value("sketchLatentCorrelation", 0.0)},
                    {"colourExplainedVariance", colourPca.explainedVarianceRatio},
                    {"sketchExplainedVariance", sketchPca.explainedVarianceRatio}}
                   .dump(2)
            << "\n";
    return result;
}

}  // namespace sketchcolour::pipeline
