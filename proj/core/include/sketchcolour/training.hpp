#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sketchcolour/adapters.hpp"
#include "sketchcolour/checkpoint.hpp"
#include "sketchcolour/config.hpp"
#include "sketchcolour/dataset.hpp"
#include "sketchcolour/denoiser.hpp"
#include "sketchcolour/metrics.hpp"
#include "sketchcolour/videovae.hpp"

namespace sketchcolour::pipeline {

using Log = std::function<void(const std::string&)>;

/// Root for corpora, checkpoints and run outputs. Artefacts are keyed by config hash.
class Workspace {
public:
    explicit Workspace(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path data_dir(const ExperimentConfig& config) const;
    std::filesystem::path checkpoint_path(const ExperimentConfig& config, Stage stage) const;
    std::filesystem::path run_dir(const std::string& name) const;

private:
    std::filesystem::path root_;
};

/// Wall-clock training time of a stage, kept in <root>/timings.json so that
/// checkpoints stay byte-reproducible.
void record_timing(const Workspace& ws, const ExperimentConfig& config, Stage stage, double seconds);
std::optional<double> recorded_timing(const Workspace& ws, const ExperimentConfig& config, Stage stage);

/// $SKETCHCOLOUR_CACHE when set, else ./sketchcolour-cache.
std::filesystem::path default_workspace_root();

/// Hash of the sections that determine the synthetic corpus.
std::string data_hash(const ExperimentConfig& config);

struct GenDataResult {
    std::vector<data::ClipRecord> records;
    bool replaced = false;
};

/// Renders the corpus. An existing corpus from a different config is refused
/// (ContractError) unless `force` is set.
GenDataResult gen_data(const ExperimentConfig& config, const std::filesystem::path& dataRoot, bool force,
                       const Log& log);

/// Generates the corpus for `config` in the workspace when absent.
std::filesystem::path ensure_data(const ExperimentConfig& config, const Workspace& ws, const Log& log);

struct StageResult {
    std::filesystem::path checkpoint;
    nlohmann::json metrics;
    std::vector<double> losses;
    bool reused = false;
};

struct OptimiseResult {
    std::vector<double> losses;
    int64_t peakBytes = 0;
};

/// AdamW with linear warmup and gradient clipping. `lossAt(step)` builds the
/// loss for one step; a non-finite loss calls `onDiverge` then throws NumericError.
OptimiseResult optimise(const std::vector<torch::Tensor>& params, const OptimConfig& options,
                        const std::function<torch::Tensor(int64_t)>& lossAt, const std::string& tag, const Log& log,
                        const std::function<void()>& onDiverge = {});

/// Heap bytes in use (malloc arena plus mmapped blocks).
int64_t heap_in_use();

StageResult train_vae(const ExperimentConfig& config, const Workspace& ws, const Log& log);
StageResult train_base(const ExperimentConfig& config, const Workspace& ws, const Log& log);
StageResult finetune_sketch(const ExperimentConfig& config, const Workspace& ws,
                            const std::filesystem::path& baseCheckpoint, const Log& log);

/// Reuse the stage checkpoint for this config if present, else train it (and its prerequisites).
StageResult ensure_vae(const ExperimentConfig& config, const Workspace& ws, const Log& log);
StageResult ensure_base(const ExperimentConfig& config, const Workspace& ws, const Log& log);
StageResult ensure_sketch(const ExperimentConfig& config, const Workspace& ws, const Log& log);

vae::VideoVae load_vae(const ExperimentConfig& config, const std::filesystem::path& checkpoint);
dit::DiffusionTransformer load_base(const ExperimentConfig& config, const std::filesystem::path& checkpoint);
dit::DiffusionTransformer load_sketch_model(const ExperimentConfig& config, const std::filesystem::path& checkpoint);
/// Base checkpoint plus an adapter-only checkpoint.
dit::DiffusionTransformer load_sketch_from_adapter(const ExperimentConfig& config,
                                                   const std::filesystem::path& baseCheckpoint,
                                                   const std::filesystem::path& adapterCheckpoint);

/// Builds the Stage-B model from a Stage-A one: zero-init expansion then LoRA.
void prepare_sketch_model(dit::DiffusionTransformer& model, const ExperimentConfig& config);

/// Mean over clips of |Pearson r| between the first principal component of the
/// sketch-clip latent and the binary sketch, averaged over each latent frame's
/// temporal group and area-downsampled to latent resolution.
double sketch_latent_correlation(vae::VideoVae& vae, const std::vector<VideoTensor>& clips,
                                 const ExperimentConfig& config);

/// Binary sketch (first channel) pooled to the latent grid, [t, h, w].
torch::Tensor downsample_sketch(const VideoTensor& sketches, const VaeConfig& vae);

struct HeldOutComparison {
    metrics::MetricReport stageA;
    metrics::MetricReport stageB;
    std::vector<std::vector<double>> stageBFrameMsce;  // clip -> per-frame MSCE
};

/// Samples held-out clips with Stage-A (no sketch) and Stage-B (with sketch)
/// from identical seeds and scores both against ground truth.
HeldOutComparison held_out_comparison(const ExperimentConfig& config, const Workspace& ws, int64_t clips,
                                      const Log& log);

struct VariantReport {
    std::string name;
    adapters::ParamReport params;
    int64_t peakBytes = 0;
    int64_t steps = 0;
    double heldOutMsce = 0.0;
    double heldOutSsim = 0.0;
    std::vector<double> losses;
};

struct CompareReport {
    std::vector<VariantReport> variants;
    double paramRatio = 0.0;
    bool zeroInitHolds = false;
};

void to_json(nlohmann::json& j, const VariantReport& r);
void to_json(nlohmann::json& j, const CompareReport& r);
/// step,<variant losses...> rows.
std::string loss_curves_csv(const CompareReport& report);

/// Census and zero-at-init check of both Stage-B variants, without training.
CompareReport compare_census(const ExperimentConfig& config, dit::DiffusionTransformer base);

/// Fine-tunes both variants from one Stage-A checkpoint with identical seeds and steps.
CompareReport compare(const ExperimentConfig& config, const Workspace& ws,
                      const std::filesystem::path& baseCheckpoint, int64_t evalClips, const Log& log);

struct InferResult {
    std::filesystem::path outDir;
    int64_t frames = 0;
    bool binarized = false;
    bool resized = false;
};

InferResult infer(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                  const std::filesystem::path& vaeCheckpoint, const std::filesystem::path& referencePng,
                  const std::filesystem::path& sketchDir, const std::filesystem::path& outDir,
                  const SamplerConfig& sampler, const Log& log);

struct VizResult {
    int64_t latentFrames = 0;
    double correlation = 0.0;
    std::vector<std::filesystem::path> files;
};

VizResult viz_latents(const ExperimentConfig& config, const std::filesystem::path& vaeCheckpoint,
                      const std::filesystem::path& clipDir, const std::filesystem::path& outDir, const Log& log);

}  // namespace sketchcolour::pipeline
