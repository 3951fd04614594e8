#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "sketchcolour/checkpoint.hpp"
#include "sketchcolour/config.hpp"
#include "sketchcolour/errors.hpp"
#include "sketchcolour/image_io.hpp"
#include "sketchcolour/metrics.hpp"
#include "sketchcolour/sketcher.hpp"
#include "sketchcolour/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sketchcolour;

namespace {

struct CommonOptions {
    std::string preset;
    std::string configPath;
    std::vector<std::string> overrides;
    std::string workdir;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--preset", o.preset, "toy | default | desk-cpu | smoke | paper");
    cmd->add_option("--config", o.configPath, "JSON config file (layered over the preset)");
    cmd->add_option("--set", o.overrides, "dotted.key=value override, repeatable");
    cmd->add_option("--workdir", o.workdir, "corpus/checkpoint root (default $SKETCHCOLOUR_CACHE)");
    cmd->add_flag("-q,--quiet", o.quiet, "suppress progress logs");
}

bool has_explicit_config(const CommonOptions& o) {
    return !o.preset.empty() || !o.configPath.empty() || !o.overrides.empty();
}

ExperimentConfig build_config(const CommonOptions& o, const std::optional<json>& fallback = std::nullopt) {
    json j;
    if (!has_explicit_config(o) && fallback && !fallback->empty()) {
        j = *fallback;
    } else {
        j = json(preset_config(o.preset.empty() ? "toy" : o.preset));
    }
    if (!o.configPath.empty()) {
        std::ifstream in(o.configPath);
        if (!in) {
            throw IoError("cannot open config file " + o.configPath);
        }
        const json file = json::parse(in, nullptr, false);
        if (file.is_discarded()) {
            throw ConfigError("config file " + o.configPath + " is not valid JSON");
        }
        j.merge_patch(file);
    }
    for (const auto& s : o.overrides) {
        apply_override(j, s);
    }
    auto config = j.get<ExperimentConfig>();
    config.resolve();
    return config;
}

pipeline::Workspace workspace(const CommonOptions& o) {
    return pipeline::Workspace(o.workdir.empty() ? pipeline::default_workspace_root() : fs::path(o.workdir));
}

pipeline::Log logger(const CommonOptions& o) {
    if (o.quiet) {
        return {};
    }
    return [](const std::string& line) { std::cerr << line << std::endl; };
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    at::set_num_threads(1);
    at::set_num_interop_threads(1);

    CLI::App app{"Sketch-conditioned reference video colourisation at desk scale"};
    app.require_subcommand(1);
    CommonOptions common;

    auto* genData = app.add_subcommand("gen-data", "render the synthetic moving-shapes corpus");
    add_common(genData, common);
    bool force = false;
    std::string dataOut;
    genData->add_flag("--force", force, "replace an existing corpus built from another config");
    genData->add_option("--out", dataOut, "corpus directory (default: inside the workdir)");

    auto* trainVae = app.add_subcommand("train-vae", "train the video VAE on the train split");
    add_common(trainVae, common);

    auto* trainBase = app.add_subcommand("train-base", "train the reference-conditioned Stage-A model");
    add_common(trainBase, common);

    auto* finetune = app.add_subcommand("finetune-sketch", "expand to a sketch stream, inject LoRA and fine-tune");
    add_common(finetune, common);
    std::string baseCkpt;
    finetune->add_option("--base", baseCkpt, "Stage-A checkpoint (default: the workdir's one for this config)");

    auto* infer = app.add_subcommand("infer", "colourise a sketch sequence from a reference frame");
    add_common(infer, common);
    std::string inferCkpt, inferVae, referencePng, sketchDir, inferOut;
    int64_t seed = 0;
    int64_t steps = 0;
    double eta = -1.0;
    infer->add_option("--checkpoint", inferCkpt, "sketchB or controlnetB checkpoint");
    infer->add_option("--vae", inferVae, "VAE checkpoint (default: the workdir's one)");
    infer->add_option("--reference", referencePng, "reference frame PNG")->required();
    infer->add_option("--sketches", sketchDir, "directory of sketch PNG frames")->required();
    infer->add_option("--out", inferOut, "output frame directory")->required();
    infer->add_option("--seed", seed, "sampler seed");
    infer->add_option("--steps", steps, "DDIM steps (default from config)");
    infer->add_option("--eta", eta, "DDIM eta (default from config)");

    auto* eval = app.add_subcommand("eval", "score predicted clips against ground truth");
    add_common(eval, common);
    std::string predRoot, gtRoot, reportPath;
    eval->add_option("--pred", predRoot, "directory of predicted clip directories")->required();
    eval->add_option("--gt", gtRoot, "directory of ground-truth clip directories")->required();
    eval->add_option("--report", reportPath, "write the JSON report here");

    auto* compare = app.add_subcommand("compare", "fine-tune channel-concat+LoRA and a ControlNet baseline");
    add_common(compare, common);
    std::string compareBase, compareOut;
    int64_t evalClips = 0;
    bool censusOnly = false;
    compare->add_option("--base", compareBase, "Stage-A checkpoint (default: the workdir's one)");
    compare->add_option("--out", compareOut, "report directory (default: <workdir>/runs/compare)");
    compare->add_option("--eval-clips", evalClips, "held-out clips to score (default: all)");
    compare->add_flag("--census-only", censusOnly, "parameter census and zero-init check without training");

    auto* viz = app.add_subcommand("viz-latents", "PCA images of colour and sketch latents");
    add_common(viz, common);
    std::string vizVae, clipDir, vizOut;
    viz->add_option("--vae", vizVae, "VAE checkpoint (default: the workdir's one)");
    viz->add_option("--clip", clipDir, "clip frame directory")->required();
    viz->add_option("--out", vizOut, "output directory")->required();

    auto* sketchCmd = app.add_subcommand("sketch", "extract binary line art from a frame directory");
    add_common(sketchCmd, common);
    std::string sketchIn, sketchOut;
    sketchCmd->add_option("--in", sketchIn, "colour frame directory")->required();
    sketchCmd->add_option("--out", sketchOut, "sketch frame directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        const auto log = logger(common);
        if (genData->parsed()) {
            const auto config = build_config(common);
            const auto ws = workspace(common);
            const fs::path root = dataOut.empty() ? ws.data_dir(config) : fs::path(dataOut);
            const auto result = pipeline::gen_data(config, root, force, log);
            std::cout << json{{"dataRoot", root.string()},
                              {"clips", result.records.size()},
                              {"replaced", result.replaced}}
                             .dump()
                      << "\n";
        } else if (trainVae->parsed()) {
            const auto config = build_config(common);
            const auto r = pipeline::train_vae(config, workspace(common), log);
            std::cout << json{{"checkpoint", r.checkpoint.string()}, {"metrics", r.metrics}}.dump() << "\n";
        } else if (trainBase->parsed()) {
            const auto config = build_config(common);
            const auto r = pipeline::train_base(config, workspace(common), log);
            std::cout << json{{"checkpoint", r.checkpoint.string()}, {"metrics", r.metrics}}.dump() << "\n";
        } else if (finetune->parsed()) {
            const auto ws = workspace(common);
            std::optional<json> embedded;
            if (!baseCkpt.empty()) {
                embedded = ckpt::load(baseCkpt).meta.config;
            }
            const auto config = build_config(common, embedded);
            const fs::path base = baseCkpt.empty() ? ws.checkpoint_path(config, Stage::baseA) : fs::path(baseCkpt);
            const auto r = pipeline::finetune_sketch(config, ws, base, log);
            std::cout << json{{"checkpoint", r.checkpoint.string()}, {"metrics", r.metrics}}.dump() << "\n";
        } else if (infer->parsed()) {
            const auto ws = workspace(common);
            std::optional<json> embedded;
            if (!inferCkpt.empty()) {
                embedded = ckpt::load(inferCkpt).meta.config;
            }
            const auto config = build_config(common, embedded);
            const fs::path model = inferCkpt.empty() ? ws.checkpoint_path(config, Stage::sketchB) : fs::path(inferCkpt);
            const fs::path vaePath = inferVae.empty() ? ws.checkpoint_path(config, Stage::vae) : fs::path(inferVae);
            SamplerConfig sampler = config.sampler;
            if (infer->count("--seed") > 0) {
                sampler.seed = static_cast<uint64_t>(seed);
            }
            if (steps > 0) {
                sampler.numInferenceSteps = steps;
            }
            if (eta >= 0.0) {
                sampler.eta = eta;
            }
            sampler.validate(config.schedule);
            const auto r = pipeline::infer(config, model, vaePath, referencePng, sketchDir, inferOut, sampler, log);
            std::cout << json{{"out", r.outDir.string()},
                              {"frames", r.frames},
                              {"binarized", r.binarized},
                              {"resized", r.resized}}
                             .dump()
                      << "\n";
        } else if (eval->parsed()) {
            const auto config = build_config(common);
            const auto report = metrics::evaluate(predRoot, gtRoot, config.eval);
            if (!reportPath.empty()) {
                write_text(reportPath, json(report).dump(2) + "\n");
            }
            std::cout << metrics::format_table({{"pred", report}});
            if (report.partial) {
                std::cerr << "evaluation incomplete: " << report.missing.size() << " clip(s) missing\n";
                return static_cast<int>(ExitCode::contract);
            }
        } else if (compare->parsed()) {
            const auto ws = workspace(common);
            std::optional<json> embedded;
            if (!compareBase.empty()) {
                embedded = ckpt::load(compareBase).meta.config;
            }
            const auto config = build_config(common, embedded);
            const fs::path base =
                compareBase.empty() ? ws.checkpoint_path(config, Stage::baseA) : fs::path(compareBase);
            const fs::path out = compareOut.empty() ? ws.run_dir("compare") : fs::path(compareOut);
            pipeline::CompareReport report;
            if (censusOnly) {
                report = pipeline::compare_census(config, pipeline::load_base(config, base));
            } else {
                report = pipeline::compare(config, ws, base, evalClips, log);
                write_text(out / "loss_curves.csv", pipeline::loss_curves_csv(report));
            }
            write_text(out / "report.json", json(report).dump(2) + "\n");
            std::cout << json(report).dump(2) << "\n";
            if (!report.zeroInitHolds) {
                std::cerr << "zero-at-init check failed\n";
                return static_cast<int>(ExitCode::contract);
            }
        } else if (viz->parsed()) {
            const auto ws = workspace(common);
            std::optional<json> embedded;
            if (!vizVae.empty()) {
                embedded = ckpt::load(vizVae).meta.config;
            }
            const auto config = build_config(common, embedded);
            const fs::path vaePath = vizVae.empty() ? ws.checkpoint_path(config, Stage::vae) : fs::path(vizVae);
            const auto r = pipeline::viz_latents(config, vaePath, clipDir, vizOut, log);
            std::cout << json{{"latentFrames", r.latentFrames},
                              {"files", r.files.size()},
                              {"sketchLatentCorrelation", r.correlation}}
                             .dump()
                      << "\n";
        } else if (sketchCmd->parsed()) {
            const auto config = build_config(common);
            const auto clip = io::read_frame_dir(sketchIn);
            io::write_frame_dir(sketchOut, sketch::sketch_video(clip, config.sketch));
            std::cout << json{{"frames", clip.frames()}, {"out", sketchOut}}.dump() << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.exit_code());
    } catch (const c10::Error& e) {
        std::cerr << "error: " << e.what_without_backtrace() << "\n";
        return static_cast<int>(ExitCode::numeric);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::contract);
    }
    return 0;
}
