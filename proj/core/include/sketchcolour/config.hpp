#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sketchcolour {

struct VaeConfig {
    int64_t temporalFactor = 4;
    int64_t spatialFactor = 4;
    int64_t latentChannels = 16;
    int64_t baseWidth = 32;
    double klWeight = 1e-6;

    void validate() const;
};

struct SketchConfig {
    double sigmaNarrow = 0.8;
    double sigmaWide = 1.6;
    double dogThreshold = 0.02;
    double binarizeThreshold = 0.5;
    bool invert = true;

    void validate() const;
};

struct DitConfig {
    int64_t modelDim = 128;
    int64_t depth = 4;
    int64_t heads = 4;
    int64_t patchT = 1;
    int64_t patchH = 2;
    int64_t patchW = 2;
    int64_t latentChannels = 16;
    int64_t streams = 3;
    int64_t ffnMultiplier = 4;
    // Token grid extent per axis; sizes the factorized positional tables.
    int64_t gridT = 5;
    int64_t gridH = 8;
    int64_t gridW = 12;

    int64_t patch_volume() const { return patchT * patchH * patchW; }
    int64_t ffn_hidden() const { return ffnMultiplier * modelDim; }
    void validate() const;
};

enum class LoraTarget { attnQ, attnK, attnV, attnO, ffnIn, ffnOut };

std::string_view to_string(LoraTarget target);
LoraTarget lora_target_from_string(std::string_view name);
std::set<LoraTarget> all_lora_targets();

struct LoraConfig {
    int64_t rank = 8;
    // Non-positive alpha means "equal to rank" (unit scaling).
    double alpha = 0.0;
    std::set<LoraTarget> targets = all_lora_targets();
    double dropout = 0.0;

    double scaling() const { return (alpha > 0.0 ? alpha : static_cast<double>(rank)) / static_cast<double>(rank); }
    void validate() const;
};

enum class ScheduleKind { linear, cosine };
enum class PredictionType { epsilon, v };

struct ScheduleConfig {
    int64_t steps = 1000;
    double betaStart = 1e-4;
    double betaEnd = 2e-2;
    ScheduleKind kind = ScheduleKind::cosine;
    PredictionType predictionType = PredictionType::v;

    void validate() const;
};

struct SamplerConfig {
    int64_t numInferenceSteps = 50;
    double eta = 0.0;
    uint64_t seed = 0;

    void validate(const ScheduleConfig& schedule) const;
};

struct DataConfig {
    int64_t trainClips = 512;
    int64_t testClips = 32;
    int64_t frames = 17;
    int64_t height = 64;
    int64_t width = 96;
    // Raw synthetic clips are rendered at this size and brought to
    // height x width by fill-and-crop; zero means "same as target".
    int64_t sourceHeight = 0;
    int64_t sourceWidth = 0;
    // Raw clip length range; clips are windowed down to `frames`.
    int64_t minClipFrames = 17;
    int64_t maxClipFrames = 17;

    void validate() const;
};

struct OptimConfig {
    int64_t steps = 20000;
    int64_t batchSize = 2;
    double learningRate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weightDecay = 1e-4;
    double gradClip = 1.0;
    int64_t warmupSteps = 200;
    int64_t logEvery = 100;

    void validate() const;
};

struct SketchTrainConfig : OptimConfig {
    bool freezePretrainedPatchSlice = false;
    // ControlNet branch depth for `compare`; zero means the full trunk depth.
    int64_t controlnetBranchDepth = 0;
};

enum class MsceMode { rgb, yuvChroma };

struct EvalConfig {
    MsceMode msceMode = MsceMode::rgb;
    uint64_t featureSeed = 1234;
    int64_t featureDim = 256;
    // Number of held-out clips sampled by training-stage evaluations (0 = all).
    int64_t heldOutClips = 0;
};

struct ExperimentConfig {
    uint64_t rootSeed = 20240601;
    DataConfig data;
    SketchConfig sketch;
    VaeConfig vae;
    OptimConfig trainVae;
    DitConfig dit;
    LoraConfig lora;
    ScheduleConfig schedule;
    SamplerConfig sampler;
    OptimConfig trainBase;
    SketchTrainConfig trainSketch;
    EvalConfig eval;

    ExperimentConfig();

    /// Fills derived fields (token grid extents) and checks every section.
    void resolve();
    void validate() const;
};

/// Named presets: "toy" (defaults), "paper", "desk-cpu", "smoke".
ExperimentConfig preset_config(std::string_view name);

/// Applies one `dotted.key=value` override; value is parsed as JSON when possible.
void apply_override(nlohmann::json& config, std::string_view assignment);

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);

/// Which checkpoint a hash covers; each stage hashes the config sections
/// that determine its weights.
enum class Stage { vae, baseA, sketchB, controlnetB };

std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view name);

std::string config_hash(const ExperimentConfig& config, Stage stage);

/// 64-bit FNV-1a rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);
void to_json(nlohmann::json& j, const SketchConfig& c);
void from_json(const nlohmann::json& j, SketchConfig& c);
void to_json(nlohmann::json& j, const DitConfig& c);
void from_json(const nlohmann::json& j, DitConfig& c);
void to_json(nlohmann::json& j, const LoraConfig& c);
void from_json(const nlohmann::json& j, LoraConfig& c);
void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);
void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);
void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);
void to_json(nlohmann::json& j, const SketchTrainConfig& c);
void from_json(const nlohmann::json& j, SketchTrainConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

}  // namespace sketchcolour
