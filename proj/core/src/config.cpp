#include "sketchcolour/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sketchcolour/errors.hpp"

namespace sketchcolour {

using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& field) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            it->get_to(field);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config field '") + key + "': " + e.what());
        }
    }
}

void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ConfigError(message);
    }
}

bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

// Rejects keys that the canonical serialisation does not know about.
void check_known_keys(const json& given, const json& canonical, const std::string& path) {
    if (!given.is_object() || !canonical.is_object()) {
        return;
    }
    for (const auto& [key, value] : given.items()) {
        auto it = canonical.find(key);
        if (it == canonical.end()) {
            throw ConfigError("unknown config key '" + path + key + "'");
        }
        check_known_keys(value, *it, path + key + ".");
    }
}

}  // namespace

void VaeConfig::validate() const {
    require(temporalFactor >= 1, "vae.temporalFactor must be >= 1");
    require(spatialFactor >= 1 && is_power_of_two(spatialFactor), "vae.spatialFactor must be a power of 2");
    require(latentChannels >= 1, "vae.latentChannels must be >= 1");
    require(baseWidth >= 1, "vae.baseWidth must be >= 1");
    require(klWeight >= 0.0 && std::isfinite(klWeight), "vae.klWeight must be finite and >= 0");
}

void SketchConfig::validate() const {
    require(sigmaNarrow > 0.0, "sketch.sigmaNarrow must be > 0");
    require(sigmaWide > sigmaNarrow, "sketch.sigmaWide must exceed sigmaNarrow");
    require(dogThreshold > 0.0 && dogThreshold < 1.0, "sketch.dogThreshold must lie in (0,1)");
    require(binarizeThreshold > 0.0 && binarizeThreshold < 1.0, "sketch.binarizeThreshold must lie in (0,1)");
}

void DitConfig::validate() const {
    require(modelDim >= 1 && heads >= 1 && modelDim % heads == 0, "dit.modelDim must be divisible by dit.heads");
    require(depth >= 1, "dit.depth must be >= 1");
    require(patchT >= 1 && patchH >= 1 && patchW >= 1, "dit patch sizes must be >= 1");
    require(latentChannels >= 1, "dit.latentChannels must be >= 1");
    require(streams == 3, "dit.streams must be 3 (noisy video, reference, sketch)");
    require(ffnMultiplier >= 1, "dit.ffnMultiplier must be >= 1");
    require(gridT >= 1 && gridH >= 1 && gridW >= 1, "dit grid extents must be >= 1");
}

std::string_view to_string(LoraTarget target) {
    switch (target) {
        case LoraTarget::attnQ: return "attnQ";
        case LoraTarget::attnK: return "attnK";
        case LoraTarget::attnV: return "attnV";
        case LoraTarget::attnO: return "attnO";
        case LoraTarget::ffnIn: return "ffnIn";
        case LoraTarget::ffnOut: return "ffnOut";
    }
    return "?";
}

LoraTarget lora_target_from_string(std::string_view name) {
    for (LoraTarget t : all_lora_targets()) {
        if (to_string(t) == name) {
            return t;
        }
    }
    throw ConfigError("unknown LoRA target '" + std::string(name) + "'");
}

std::set<LoraTarget> all_lora_targets() {
    return {LoraTarget::attnQ, LoraTarget::attnK, LoraTarget::attnV,
            LoraTarget::attnO, LoraTarget::ffnIn, LoraTarget::ffnOut};
}

void LoraConfig::validate() const {
    require(rank >= 1, "lora.rank must be >= 1");
    require(!targets.empty(), "lora.targets must be nonempty");
    require(dropout >= 0.0 && dropout < 1.0, "lora.dropout must lie in [0,1)");
    require(std::isfinite(alpha), "lora.alpha must be finite");
}

void ScheduleConfig::validate() const {
    require(steps >= 2, "schedule.steps must be >= 2");
    require(betaStart > 0.0 && betaStart <= betaEnd && betaEnd < 1.0,
            "schedule requires 0 < betaStart <= betaEnd < 1");
}

void SamplerConfig::validate(const ScheduleConfig& schedule) const {
    require(numInferenceSteps >= 1 && numInferenceSteps <= schedule.steps,
            "sampler.numInferenceSteps must lie in [1, schedule.steps]");
    require(eta >= 0.0 && eta <= 1.0, "sampler.eta must lie in [0,1]");
}

void DataConfig::validate() const {
    require(trainClips >= 1 && testClips >= 1, "data clip counts must be >= 1");
    require(frames >= 1 && height >= 1 && width >= 1, "data dimensions must be >= 1");
    require(minClipFrames >= frames && maxClipFrames >= minClipFrames,
            "data requires frames <= minClipFrames <= maxClipFrames");
    require(sourceHeight >= 0 && sourceWidth >= 0, "data source size must be >= 0");
}

void OptimConfig::validate() const {
    require(steps >= 0, "train steps must be >= 0");
    require(batchSize >= 1, "train batchSize must be >= 1");
    require(learningRate > 0.0, "train learningRate must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train betas must lie in [0,1)");
    require(weightDecay >= 0.0, "train weightDecay must be >= 0");
    require(gradClip > 0.0, "train gradClip must be > 0");
    require(warmupSteps >= 0 && logEvery >= 1, "train warmupSteps >= 0 and logEvery >= 1 required");
}

ExperimentConfig::ExperimentConfig() {
    trainVae.steps = 3000;
    trainVae.batchSize = 1;
    trainVae.learningRate = 5e-4;
    trainVae.beta2 = 0.999;
    trainVae.weightDecay = 0.0;
    trainVae.warmupSteps = 100;
}

void ExperimentConfig::resolve() {
    dit.latentChannels = vae.latentChannels;
    dit.gridT = std::max<int64_t>(1, ((data.frames - 1) / vae.temporalFactor + 1) / dit.patchT);
    dit.gridH = std::max<int64_t>(1, data.height / vae.spatialFactor / dit.patchH);
    dit.gridW = std::max<int64_t>(1, data.width / vae.spatialFactor / dit.patchW);
    validate();
}

void ExperimentConfig::validate() const {
    data.validate();
    sketch.validate();
    vae.validate();
    trainVae.validate();
    dit.validate();
    lora.validate();
    schedule.validate();
    sampler.validate(schedule);
    trainBase.validate();
    trainSketch.validate();
    require(trainSketch.controlnetBranchDepth >= 0 && trainSketch.controlnetBranchDepth <= dit.depth,
            "trainSketch.controlnetBranchDepth must lie in [0, dit.depth]");
    require(dit.latentChannels == vae.latentChannels, "dit.latentChannels must equal vae.latentChannels");
    require((data.frames - 1) % vae.temporalFactor == 0,
            "data.frames must be 1 mod vae.temporalFactor");
    require(data.height % vae.spatialFactor == 0 && data.width % vae.spatialFactor == 0,
            "data resolution must be divisible by vae.spatialFactor");
    require(eval.featureDim >= 1, "eval.featureDim must be >= 1");
}

ExperimentConfig preset_config(std::string_view name) {
    ExperimentConfig c;
    if (name == "toy" || name == "default") {
        // defaults
    } else if (name == "paper") {
        c.lora.rank = 192;
        c.trainBase.steps = 40000;
        c.trainSketch.steps = 40000;
        c.data.height = 480;
        c.data.width = 720;
    } else if (name == "desk-cpu") {
        // Reduced configuration that trains end to end on one CPU core.
        c.data.height = 32;
        c.data.width = 48;
        c.vae.baseWidth = 16;
        c.trainVae.steps = 3000;
        c.trainBase.steps = 20000;
        c.trainBase.learningRate = 4e-4;
        c.trainSketch.steps = 20000;
        c.trainSketch.learningRate = 4e-4;
        c.trainBase.logEvery = 1000;
        c.trainSketch.logEvery = 1000;
    } else if (name == "smoke") {
        c.data.trainClips = 8;
        c.data.testClips = 2;
        c.data.height = 16;
        c.data.width = 24;
        c.vae.baseWidth = 4;
        c.trainVae.steps = 500;
        c.trainVae.logEvery = 100;
        c.dit.modelDim = 32;
        c.dit.depth = 2;
        c.dit.heads = 2;
        c.lora.rank = 4;
        c.trainBase.steps = 100;
        c.trainBase.warmupSteps = 10;
        c.trainBase.logEvery = 50;
        c.trainSketch.steps = 200;
        c.trainSketch.warmupSteps = 10;
        c.trainSketch.logEvery = 50;
        c.sampler.numInferenceSteps = 10;
        c.eval.featureDim = 16;
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "' (expected toy, paper, desk-cpu, smoke)");
    }
    c.resolve();
    return c;
}

void apply_override(json& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("override must look like key=value: '" + std::string(assignment) + "'");
    }
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        value = raw;
    }
    json* node = &config;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        parts.push_back(part);
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) {
            throw ConfigError("override key '" + key + "' does not name a config field");
        }
        node = &(*node)[parts[i]];
    }
    if (!node->contains(parts.back())) {
        throw ConfigError("override key '" + key + "' does not name a config field");
    }
    (*node)[parts.back()] = value;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file " + path);
    }
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw ConfigError("config file " + path + " is not valid JSON");
    }
    ExperimentConfig c = j.get<ExperimentConfig>();
    c.resolve();
    return c;
}

void save_config(const ExperimentConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write config file " + path);
    }
    out << json(config).dump(2) << "\n";
}

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::vae: return "vae";
        case Stage::baseA: return "baseA";
        case Stage::sketchB: return "sketchB";
        case Stage::controlnetB: return "controlnetB";
    }
    return "?";
}

Stage stage_from_string(std::string_view name) {
    for (Stage s : {Stage::vae, Stage::baseA, Stage::sketchB, Stage::controlnetB}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ContractError("unknown checkpoint stage '" + std::string(name) + "'");
}

std::string fnv1a_hex(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const ExperimentConfig& config, Stage stage) {
    const json full = config;
    json covered;
    for (const char* key : {"rootSeed", "data", "sketch", "vae", "trainVae"}) {
        covered[key] = full[key];
    }
    if (stage != Stage::vae) {
        for (const char* key : {"dit", "schedule", "trainBase"}) {
            covered[key] = full[key];
        }
    }
    if (stage == Stage::sketchB || stage == Stage::controlnetB) {
        covered["lora"] = full["lora"];
        covered["trainSketch"] = full["trainSketch"];
    }
    return fnv1a_hex(covered.dump());
}

// ---------------------------------------------------------------------------
// JSON mapping

void to_json(json& j, const VaeConfig& c) {
    j = json{{"temporalFactor", c.temporalFactor}, {"spatialFactor", c.spatialFactor},
             {"latentChannels", c.latentChannels}, {"baseWidth", c.baseWidth},
             {"klWeight", c.klWeight}};
}

void from_json(const json& j, VaeConfig& c) {
    read_field(j, "temporalFactor", c.temporalFactor);
    read_field(j, "spatialFactor", c.spatialFactor);
    read_field(j, "latentChannels", c.latentChannels);
    read_field(j, "baseWidth", c.baseWidth);
    read_field(j, "klWeight", c.klWeight);
}

void to_json(json& j, const SketchConfig& c) {
    j = json{{"sigmaNarrow", c.sigmaNarrow}, {"sigmaWide", c.sigmaWide},
             {"dogThreshold", c.dogThreshold}, {"binarizeThreshold", c.binarizeThreshold},
             {"invert", c.invert}};
}

void from_json(const json& j, SketchConfig& c) {
    read_field(j, "sigmaNarrow", c.sigmaNarrow);
    read_field(j, "sigmaWide", c.sigmaWide);
    read_field(j, "dogThreshold", c.dogThreshold);
    read_field(j, "binarizeThreshold", c.binarizeThreshold);
    read_field(j, "invert", c.invert);
}

void to_json(json& j, const DitConfig& c) {
    j = json{{"modelDim", c.modelDim}, {"depth", c.depth}, {"heads", c.heads},
             {"patchT", c.patchT}, {"patchH", c.patchH}, {"patchW", c.patchW},
             {"latentChannels", c.latentChannels}, {"streams", c.streams},
             {"ffnMultiplier", c.ffnMultiplier}, {"gridT", c.gridT}, {"gridH", c.gridH},
             {"gridW", c.gridW}};
}

void from_json(const json& j, DitConfig& c) {
    read_field(j, "modelDim", c.modelDim);
    read_field(j, "depth", c.depth);
    read_field(j, "heads", c.heads);
    read_field(j, "patchT", c.patchT);
    read_field(j, "patchH", c.patchH);
    read_field(j, "patchW", c.patchW);
    read_field(j, "latentChannels", c.latentChannels);
    read_field(j, "streams", c.streams);
    read_field(j, "ffnMultiplier", c.ffnMultiplier);
    read_field(j, "gridT", c.gridT);
    read_field(j, "gridH", c.gridH);
    read_field(j, "gridW", c.gridW);
}

void to_json(json& j, const LoraConfig& c) {
    std::vector<std::string> names;
    for (LoraTarget t : c.targets) {
        names.emplace_back(to_string(t));
    }
    j = json{{"rank", c.rank}, {"alpha", c.alpha}, {"targets", names}, {"dropout", c.dropout}};
}

void from_json(const json& j, LoraConfig& c) {
    read_field(j, "rank", c.rank);
    read_field(j, "alpha", c.alpha);
    read_field(j, "dropout", c.dropout);
    if (auto it = j.find("targets"); it != j.end()) {
        c.targets.clear();
        for (const auto& name : *it) {
            c.targets.insert(lora_target_from_string(name.get<std::string>()));
        }
    }
}

void to_json(json& j, const ScheduleConfig& c) {
    j = json{{"steps", c.steps}, {"betaStart", c.betaStart}, {"betaEnd", c.betaEnd},
             {"kind", c.kind == ScheduleKind::cosine ? "cosine" : "linear"},
             {"predictionType", c.predictionType == PredictionType::v ? "v" : "epsilon"}};
}

void from_json(const json& j, ScheduleConfig& c) {
    read_field(j, "steps", c.steps);
    read_field(j, "betaStart", c.betaStart);
    read_field(j, "betaEnd", c.betaEnd);
    if (auto it = j.find("kind"); it != j.end()) {
        const auto kind = it->get<std::string>();
        require(kind == "cosine" || kind == "linear", "schedule.kind must be cosine or linear");
        c.kind = kind == "cosine" ? ScheduleKind::cosine : ScheduleKind::linear;
    }
    if (auto it = j.find("predictionType"); it != j.end()) {
        const auto type = it->get<std::string>();
        require(type == "v" || type == "epsilon", "schedule.predictionType must be v or epsilon");
        c.predictionType = type == "v" ? PredictionType::v : PredictionType::epsilon;
    }
}

void to_json(json& j, const SamplerConfig& c) {
    j = json{{"numInferenceSteps", c.numInferenceSteps}, {"eta", c.eta}, {"seed", c.seed}};
}

void from_json(const json& j, SamplerConfig& c) {
    read_field(j, "numInferenceSteps", c.numInferenceSteps);
    read_field(j, "eta", c.eta);
    read_field(j, "seed", c.seed);
}

void to_json(json& j, const DataConfig& c) {
    j = json{{"trainClips", c.trainClips}, {"testClips", c.testClips}, {"frames", c.frames},
             {"height", c.height}, {"width", c.width}, {"sourceHeight", c.sourceHeight},
             {"sourceWidth", c.sourceWidth}, {"minClipFrames", c.minClipFrames},
             {"maxClipFrames", c.maxClipFrames}};
}

void from_json(const json& j, DataConfig& c) {
    read_field(j, "trainClips", c.trainClips);
    read_field(j, "testClips", c.testClips);
    read_field(j, "frames", c.frames);
    read_field(j, "height", c.height);
    read_field(j, "width", c.width);
    read_field(j, "sourceHeight", c.sourceHeight);
    read_field(j, "sourceWidth", c.sourceWidth);
    read_field(j, "minClipFrames", c.minClipFrames);
    read_field(j, "maxClipFrames", c.maxClipFrames);
}

void to_json(json& j, const OptimConfig& c) {
    j = json{{"steps", c.steps}, {"batchSize", c.batchSize}, {"learningRate", c.learningRate},
             {"beta1", c.beta1}, {"beta2", c.beta2}, {"weightDecay", c.weightDecay},
             {"gradClip", c.gradClip}, {"warmupSteps", c.warmupSteps}, {"logEvery", c.logEvery}};
}

void from_json(const json& j, OptimConfig& c) {
    read_field(j, "steps", c.steps);
    read_field(j, "batchSize", c.batchSize);
    read_field(j, "learningRate", c.learningRate);
    read_field(j, "beta1", c.beta1);
    read_field(j, "beta2", c.beta2);
    read_field(j, "weightDecay", c.weightDecay);
    read_field(j, "gradClip", c.gradClip);
    read_field(j, "warmupSteps", c.warmupSteps);
    read_field(j, "logEvery", c.logEvery);
}

void to_json(json& j, const SketchTrainConfig& c) {
    to_json(j, static_cast<const OptimConfig&>(c));
    j["freezePretrainedPatchSlice"] = c.freezePretrainedPatchSlice;
    j["controlnetBranchDepth"] = c.controlnetBranchDepth;
}

void from_json(const json& j, SketchTrainConfig& c) {
    from_json(j, static_cast<OptimConfig&>(c));
    read_field(j, "freezePretrainedPatchSlice", c.freezePretrainedPatchSlice);
    read_field(j, "controlnetBranchDepth", c.controlnetBranchDepth);
}

void to_json(json& j, const EvalConfig& c) {
    j = json{{"msceMode", c.msceMode == MsceMode::rgb ? "rgb" : "yuvChroma"},
             {"featureSeed", c.featureSeed}, {"featureDim", c.featureDim},
             {"heldOutClips", c.heldOutClips}};
}

void from_json(const json& j, EvalConfig& c) {
    if (auto it = j.find("msceMode"); it != j.end()) {
        const auto mode = it->get<std::string>();
        require(mode == "rgb" || mode == "yuvChroma", "eval.msceMode must be rgb or yuvChroma");
        c.msceMode = mode == "rgb" ? MsceMode::rgb : MsceMode::yuvChroma;
    }
    read_field(j, "featureSeed", c.featureSeed);
    read_field(j, "featureDim", c.featureDim);
    read_field(j, "heldOutClips", c.heldOutClips);
}

void to_json(json& j, const ExperimentConfig& c) {
    j = json{{"rootSeed", c.rootSeed}, {"data", c.data}, {"sketch", c.sketch}, {"vae", c.vae},
             {"trainVae", c.trainVae}, {"dit", c.dit}, {"lora", c.lora},
             {"schedule", c.schedule}, {"sampler", c.sampler}, {"trainBase", c.trainBase},
             {"trainSketch", c.trainSketch}, {"eval", c.eval}};
}

void from_json(const json& j, ExperimentConfig& c) {
    check_known_keys(j, json(ExperimentConfig{}), "");
    read_field(j, "rootSeed", c.rootSeed);
    read_field(j, "data", c.data);
    read_field(j, "sketch", c.sketch);
    read_field(j, "vae", c.vae);
    read_field(j, "trainVae", c.trainVae);
    read_field(j, "dit", c.dit);
    read_field(j, "lora", c.lora);
    read_field(j, "schedule", c.schedule);
    read_field(j, "sampler", c.sampler);
    read_field(j, "trainBase", c.trainBase);
    read_field(j, "trainSketch", c.trainSketch);
    read_field(j, "eval", c.eval);
}

}  // namespace sketchcolour
