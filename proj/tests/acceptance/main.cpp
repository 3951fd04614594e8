// Acceptance suite: one PASS/FAIL line per criterion.
//
//   sketchcolour_acceptance [--only N]... [--workdir DIR] [--quiet]
//
// Criteria 6, 8 and 9 share a trained desk-cpu chain in the workspace; the
// first of them to run trains it, later ones reuse the checkpoints.

#include <ATen/Parallel.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "oracles.hpp"
#include "sketchcolour/adapters.hpp"
#include "sketchcolour/checkpoint.hpp"
#include "sketchcolour/diffusion.hpp"
#include "sketchcolour/errors.hpp"
#include "sketchcolour/metrics.hpp"
#include "sketchcolour/random.hpp"
#include "sketchcolour/stats.hpp"
#include "sketchcolour/training.hpp"

using namespace sketchcolour;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path workdir;
    bool quiet = false;

    pipeline::Log log() const {
        if (quiet) {
            return [](const std::string&) {};
        }
        return [](const std::string& m) { std::cerr << "  | " << m << "\n"; };
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

torch::Tensor randn_like_grid(const DitConfig& c, at::Generator& gen, int64_t batch = 1,
                              torch::Dtype dtype = torch::kFloat32) {
    return torch::randn({batch, c.latentChannels, c.gridT * c.patchT, c.gridH * c.patchH, c.gridW * c.patchW}, gen,
                        dtype);
}

double relative_deviation(const torch::Tensor& a, const torch::Tensor& b) {
    return (a - b).abs().max().item<double>() / std::max(1e-12, b.abs().max().item<double>());
}

// --- 1 ------------------------------------------------------------------

Outcome zero_init(const Context&) {
    const auto config = preset_config("toy");
    torch::manual_seed(1);
    dit::DiffusionTransformer model(config.dit, 2);
    // Stand-in for pretrained weights: fresh models have zero gates and head.
    fixtures::randomize(*model, 2, 0.1);
    model->eval();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    const auto noisy = randn_like_grid(config.dit, gen);
    const auto ref = randn_like_grid(config.dit, gen);
    const auto t = torch::tensor({500.0});
    torch::Tensor before;
    {
        torch::NoGradGuard guard;
        before = model->predict(noisy, ref, {}, t);
    }
    pipeline::prepare_sketch_model(model, config);
    model->eval();
    int equal = 0;
    torch::NoGradGuard guard;
    for (int i = 0; i < 100; ++i) {
        const auto sketch = randn_like_grid(config.dit, gen) * (1.0 + i);
        equal += torch::equal(model->predict(noisy, ref, sketch, t), before) ? 1 : 0;
    }
    return {equal == 100, std::to_string(equal) + "/100 sketch inputs leave the output bitwise unchanged"};
}

// --- 2 ------------------------------------------------------------------

Outcome lora_algebra(const Context& ctx) {
    auto config = preset_config("toy");
    torch::manual_seed(4);
    dit::DiffusionTransformer model(config.dit, 2);
    fixtures::randomize(*model, 5, 0.1);
    model->expand_for_sketch();
    model->eval();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(6);
    std::vector<std::array<torch::Tensor, 3>> inputs;
    for (int i = 0; i < 100; ++i) {
        inputs.push_back({randn_like_grid(config.dit, gen), randn_like_grid(config.dit, gen),
                          randn_like_grid(config.dit, gen)});
    }
    const auto t = torch::tensor({321.0});
    torch::Tensor before;
    {
        torch::NoGradGuard guard;
        before = model->predict(inputs[0][0], inputs[0][1], inputs[0][2], t);
    }
    adapters::inject_lora(*model, config.lora, 7);
    bool injectionBitwise = false;
    {
        torch::NoGradGuard guard;
        injectionBitwise = torch::equal(model->predict(inputs[0][0], inputs[0][1], inputs[0][2], t), before);
    }

    // 200 optimisation steps on random regression targets.
    const diffusion::NoiseSchedule schedule(config.schedule);
    OptimConfig opt;
    opt.steps = 200;
    opt.batchSize = 1;
    opt.learningRate = 1e-3;
    opt.warmupSteps = 0;
    opt.logEvery = 50;
    model->train();
    auto lossAt = [&](int64_t step) {
        auto g = at::make_generator<at::CPUGeneratorImpl>(1000 + static_cast<uint64_t>(step));
        const auto x0 = randn_like_grid(config.dit, g);
        return diffusion::latent_loss(*model, x0, randn_like_grid(config.dit, g), randn_like_grid(config.dit, g),
                                      schedule, static_cast<uint64_t>(step));
    };
    pipeline::optimise(model->parameters(), opt, lossAt, "lora", ctx.log());
    model->eval();

    torch::NoGradGuard guard;
    std::vector<torch::Tensor> adapted;
    for (size_t i = 0; i < inputs.size(); ++i) {
        adapted.push_back(model->predict(inputs[i][0], inputs[i][1], inputs[i][2],
                                         torch::tensor({static_cast<double>(i * 9)})));
    }
    adapters::merge_lora(*model);
    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const auto merged = model->predict(inputs[i][0], inputs[i][1], inputs[i][2],
                                           torch::tensor({static_cast<double>(i * 9)}));
        worst = std::max(worst, relative_deviation(merged, adapted[i]));
    }
    return {injectionBitwise && worst <= 1e-5,
            std::string("injection bitwise ") + (injectionBitwise ? "yes" : "no") +
                ", worst merged-vs-adapter deviation " + fmt("%.2e", worst) + " (<= 1e-5)"};
}

// --- 3 ------------------------------------------------------------------

Outcome gradients(const Context&) {
    // Denoiser with LoRA factors, in double.
    auto dc = fixtures::micro_dit();
    dc.modelDim = 32;
    dc.heads = 4;
    torch::manual_seed(8);
    dit::DiffusionTransformer model(dc, 2);
    model->expand_for_sketch();
    LoraConfig lc;
    lc.rank = 2;
    adapters::inject_lora(*model, lc, 9);
    for (auto& p : model->parameters()) {
        p.set_requires_grad(true);
    }
    fixtures::randomize(*model, 10, 0.15);
    model->to(torch::kFloat64);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(11);
    const auto x = randn_like_grid(dc, gen, 1, torch::kFloat64);
    const auto r = randn_like_grid(dc, gen, 1, torch::kFloat64);
    const auto s = randn_like_grid(dc, gen, 1, torch::kFloat64);
    const auto target = randn_like_grid(dc, gen, 1, torch::kFloat64);
    const auto t = torch::tensor({123.0});
    std::vector<torch::Tensor> params;
    for (const auto& p : model->parameters()) {
        params.push_back(p);
    }
    const double denoiserErr = oracle::worst_gradient_error(
        params, [&] { return (model->predict(x, r, s, t) - target).pow(2).mean(); }, 20, 12);

    torch::manual_seed(13);
    vae::VideoVae vae(fixtures::micro_vae());
    vae->to(torch::kFloat64);
    const auto clip = torch::rand({1, 3, 5, 4, 4}, gen, torch::kFloat64);
    std::vector<torch::Tensor> vaeParams;
    for (const auto& p : vae->parameters()) {
        vaeParams.push_back(p);
    }
    const double vaeErr =
        oracle::worst_gradient_error(vaeParams, [&] { return vae::vae_loss(vae, clip, 14).total; }, 20, 15);
    return {denoiserErr <= 1e-3 && vaeErr <= 1e-3,
            "worst relative error denoiser " + fmt("%.2e", denoiserErr) + ", VAE " + fmt("%.2e", vaeErr) +
                " (<= 1e-3, 20 parameters each)"};
}

// --- 4 ------------------------------------------------------------------

Outcome shape_laws(const Context&) {
    int checked = 0;
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
        ++checked;
        if (!ok) {
            failures.push_back(what);
        }
    };
    // The 17-frame clip maps to 5 latent frames.
    const VaeConfig defaultVae;
    expect(vae::latent_shape(defaultVae, 17, 480, 720) == std::array<int64_t, 3>{5, 120, 180}, "17x480x720");
    expect(vae::latent_shape(defaultVae, 17, 64, 96) == std::array<int64_t, 3>{5, 16, 24}, "17x64x96");

    struct Case {
        int64_t t, h, w, tf, sf, pt, ph, pw;
    };
    const std::vector<Case> cases{{17, 64, 96, 4, 4, 1, 2, 2}, {17, 32, 48, 4, 4, 1, 2, 2}, {9, 16, 16, 4, 2, 1, 2, 2},
                                  {5, 16, 24, 4, 2, 2, 1, 3}, {1, 8, 8, 4, 2, 1, 4, 4},     {13, 16, 32, 2, 4, 7, 2, 1},
                                  {17, 32, 32, 8, 2, 3, 8, 4}};
    for (const auto& c : cases) {
        const std::string tag = std::to_string(c.t) + "x" + std::to_string(c.h) + "x" + std::to_string(c.w) + " tf" +
                                std::to_string(c.tf) + " sf" + std::to_string(c.sf) + " patch " +
                                std::to_string(c.pt) + std::to_string(c.ph) + std::to_string(c.pw);
        VaeConfig vc;
        vc.temporalFactor = c.tf;
        vc.spatialFactor = c.sf;
        vc.latentChannels = 4;
        vc.baseWidth = 4;
        torch::manual_seed(16);
        vae::VideoVae model(vc);
        const auto expected = vae::latent_shape(vc, c.t, c.h, c.w);
        expect(expected[0] == (c.t - 1) / c.tf + 1 && expected[1] == c.h / c.sf && expected[2] == c.w / c.sf,
               tag + " law");
        const auto z = vae::encode(model, VideoTensor(torch::rand({c.t, c.h, c.w, 3})));
        expect(z.frames() == expected[0] && z.height() == expected[1] && z.width() == expected[2] &&
                   z.channels() == 4,
               tag + " encode");
        expect(vae::decode(model, z).data().sizes() == torch::IntArrayRef({c.t, c.h, c.w, 3}), tag + " decode");

        DitConfig dc = fixtures::micro_dit();
        dc.patchT = c.pt;
        dc.patchH = c.ph;
        dc.patchW = c.pw;
        dc.gridT = expected[0] / c.pt;
        dc.gridH = expected[1] / c.ph;
        dc.gridW = expected[2] / c.pw;
        dit::DiffusionTransformer dit(dc, 3);
        const auto latent = z.to_ncdhw();
        const auto tokens = dit->patchify(torch::cat({latent, latent, latent}, 1));
        expect(tokens.tokens.size(1) == dc.gridT * dc.gridH * dc.gridW && tokens.tokens.size(2) == dc.modelDim,
               tag + " tokens");
        expect(dit->unpatchify(tokens).sizes() == latent.sizes(), tag + " unpatchify");
        dit::Grid grid{};
        const auto vectors = dit::patch_vectors(latent, dc, &grid);
        expect(torch::equal(dit::unpatch_vectors(vectors, grid, dc, 4), latent), tag + " patch round trip");
    }
    // Contract violations are reported.
    bool rejects = false;
    try {
        vae::latent_shape(defaultVae, 16, 64, 96);
    } catch (const DimensionError&) {
        rejects = true;
    }
    expect(rejects, "16 frames rejected");
    std::string detail = std::to_string(checked - static_cast<int>(failures.size())) + "/" + std::to_string(checked) +
                         " shape contracts hold";
    for (const auto& f : failures) {
        detail += "; failed " + f;
    }
    return {failures.empty(), detail};
}

// --- 5 ------------------------------------------------------------------

Outcome metric_oracles(const Context&) {
    double worst = 0.0;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(17);
    metrics::SsimOptions small;
    small.window = 3;
    for (int i = 0; i < 20; ++i) {
        const VideoTensor a(torch::rand({1, 4, 4, 3}, gen));
        const VideoTensor b(torch::rand({1, 4, 4, 3}, gen));
        const auto oa = oracle::from_tensor(a.data()[0]);
        const auto ob = oracle::from_tensor(b.data()[0]);
        worst = std::max(worst, std::abs(metrics::msce(a, b) - oracle::msce_rgb(oa, ob)));
        worst = std::max(worst, std::abs(metrics::psnr(a, b) - oracle::psnr(oa, ob)));
        worst = std::max(worst, std::abs(metrics::ssim(a, b, small) - oracle::ssim_luma(oa, ob, 3, 1.5)));
    }
    std::mt19937_64 rng(18);
    std::uniform_real_distribution<double> u(0.05, 4.0);
    std::normal_distribution<double> n;
    double frechetWorst = 0.0;
    double identical = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int dim = 2 + trial % 7;
        std::vector<double> m1(dim), m2(dim), v1(dim), v2(dim);
        Eigen::VectorXd em1(dim), em2(dim), ev1(dim), ev2(dim);
        for (int i = 0; i < dim; ++i) {
            em1[i] = m1[i] = n(rng);
            em2[i] = m2[i] = n(rng);
            ev1[i] = v1[i] = u(rng);
            ev2[i] = v2[i] = u(rng);
        }
        const Eigen::MatrixXd c1 = ev1.asDiagonal();
        const Eigen::MatrixXd c2 = ev2.asDiagonal();
        frechetWorst = std::max(frechetWorst, std::abs(metrics::frechet_distance(em1, c1, em2, c2) -
                                                       oracle::frechet_diagonal(m1, v1, m2, v2)));
        Eigen::MatrixXd a = Eigen::MatrixXd::Random(dim, dim);
        const Eigen::MatrixXd full = a * a.transpose();
        identical = std::max(identical, metrics::frechet_distance(em1, full, em1, full));
    }
    const metrics::FeatureExtractor extractor({metrics::FeatureExtractorSpec::Kind::randomConv3d, 1234, 64});
    std::vector<VideoTensor> set;
    for (int i = 0; i < 8; ++i) {
        set.push_back(VideoTensor(torch::rand({9, 32, 32, 3}, gen)));
    }
    const double self = metrics::fvd(set, set, extractor);
    const bool pass = worst <= 1e-9 && frechetWorst <= 1e-9 && identical <= 1e-8 && self <= 1e-6;
    return {pass, "pixel metrics vs double loop " + fmt("%.1e", worst) + ", Frechet vs diagonal form " +
                      fmt("%.1e", frechetWorst) + ", identical Gaussians " + fmt("%.1e", identical) +
                      ", fvd(X,X) " + fmt("%.1e", self)};
}

// --- shared desk-cpu chain for 6, 8, 9 -------------------------------------

ExperimentConfig desk_config() { return preset_config("desk-cpu"); }

struct HeldOut {
    double msceA = 0.0, msceB = 0.0, ssimA = 0.0, ssimB = 0.0;
    std::vector<std::vector<double>> frameMsce;
    double seconds = 0.0;
};

HeldOut held_out(const Context& ctx) {
    const auto config = desk_config();
    const pipeline::Workspace ws(ctx.workdir);
    const auto cache = ws.run_dir("acceptance") / ("heldout-" + config_hash(config, Stage::sketchB) + ".json");
    if (fs::exists(cache)) {
        std::ifstream in(cache);
        const auto j = json::parse(in);
        HeldOut h;
        h.msceA = j["msceA"];
        h.msceB = j["msceB"];
        h.ssimA = j["ssimA"];
        h.ssimB = j["ssimB"];
        h.frameMsce = j["frameMsce"].get<std::vector<std::vector<double>>>();
        h.seconds = j.value("seconds", 0.0);
        return h;
    }
    const auto start = std::chrono::steady_clock::now();
    const auto cmp = pipeline::held_out_comparison(config, ws, config.eval.heldOutClips, ctx.log());
    HeldOut h;
    h.msceA = cmp.stageA.aggregate.at("msce").mean;
    h.msceB = cmp.stageB.aggregate.at("msce").mean;
    h.ssimA = cmp.stageA.aggregate.at("ssim").mean;
    h.ssimB = cmp.stageB.aggregate.at("ssim").mean;
    h.frameMsce = cmp.stageBFrameMsce;
    h.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fs::create_directories(cache.parent_path());
    std::ofstream out(cache);
    out << json{{"msceA", h.msceA},
                {"msceB", h.msceB},
                {"ssimA", h.ssimA},
                {"ssimB", h.ssimB},
                {"frameMsce", h.frameMsce},
                {"seconds", h.seconds},
                {"stageA", cmp.stageA},
                {"stageB", cmp.stageB}}
               .dump(2)
        << "\n";
    return h;
}

// Wall time of everything criterion 6 needs: three training stages plus the held-out evaluation.
std::optional<double> criterion6_seconds(const Context& ctx, const HeldOut& h) {
    const auto config = desk_config();
    const pipeline::Workspace ws(ctx.workdir);
    double total = h.seconds;
    for (auto stage : {Stage::vae, Stage::baseA, Stage::sketchB}) {
        const auto t = pipeline::recorded_timing(ws, config, stage);
        if (!t) {
            return std::nullopt;
        }
        total += *t;
    }
    return total;
}

// --- 6 ------------------------------------------------------------------

Outcome end_to_end(const Context& ctx) {
    const auto h = held_out(ctx);
    const double reduction = 1.0 - h.msceB / h.msceA;
    const bool pass = reduction >= 0.40 && h.ssimB > h.ssimA;
    return {pass, "held-out MSCE A " + fmt("%.1f", h.msceA) + " -> B " + fmt("%.1f", h.msceB) + " (" +
                      fmt("%.1f", 100.0 * reduction) + "% lower, need >= 40%), SSIM A " + fmt("%.4f", h.ssimA) +
                      " -> B " + fmt("%.4f", h.ssimB)};
}

// --- 7 ------------------------------------------------------------------

Outcome efficiency(const Context& ctx) {
    const auto toy = preset_config("toy");
    torch::manual_seed(19);
    dit::DiffusionTransformer base(toy.dit, 2);
    fixtures::randomize(*base, 20, 0.1);
    const auto census = pipeline::compare_census(toy, base);
    const bool censusOk = census.paramRatio >= 10.0 && census.zeroInitHolds;
    std::string detail = "census ratio " + fmt("%.2f", census.paramRatio) + " (" +
                         std::to_string(census.variants[1].params.trainableParams) + " : " +
                         std::to_string(census.variants[0].params.trainableParams) + "), zero-at-init " +
                         (census.zeroInitHolds ? "both" : "FAILED");

    // Paired fine-tuning from the trained desk-cpu base.
    const auto config = desk_config();
    const pipeline::Workspace ws(ctx.workdir);
    const auto h = held_out(ctx);
    const auto budget = criterion6_seconds(ctx, h);
    const auto start = std::chrono::steady_clock::now();
    const auto report = pipeline::compare(config, ws, ws.checkpoint_path(config, Stage::baseA), 4, ctx.log());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pairedOk = report.zeroInitHolds && report.variants.size() == 2 &&
                          report.variants[0].steps == report.variants[1].steps;
    const bool timeOk = budget.has_value() && seconds <= 2.0 * *budget;
    detail += "; paired fine-tune " + fmt("%.0f", seconds) + " s vs criterion-6 " +
              (budget ? fmt("%.0f", *budget) + " s" : std::string("unknown (no recorded stage timings)"));
    const auto out = ws.run_dir("acceptance");
    fs::create_directories(out);
    std::ofstream(out / "compare.json") << json(report).dump(2) << "\n";
    std::ofstream(out / "loss_curves.csv") << pipeline::loss_curves_csv(report);
    return {censusOk && pairedOk && timeOk, detail};
}

// --- 8 ------------------------------------------------------------------

Outcome frame_trend(const Context& ctx) {
    const auto h = held_out(ctx);
    if (h.frameMsce.empty()) {
        return {false, "no held-out clips"};
    }
    const size_t frames = h.frameMsce.front().size();
    std::vector<double> index, mean;
    for (size_t f = 0; f < frames; ++f) {
        double s = 0.0;
        for (const auto& clip : h.frameMsce) {
            s += clip[f];
        }
        index.push_back(static_cast<double>(f));
        mean.push_back(s / static_cast<double>(h.frameMsce.size()));
    }
    const double rho = stats::spearman(index, mean);
    const double p = stats::correlation_p_value(rho, frames, stats::Tail::greater);
    return {rho > 0.0 && p < 0.05, "Spearman rho " + fmt("%.3f", rho) + " over " + std::to_string(frames) +
                                       " frame indices (" + std::to_string(h.frameMsce.size()) +
                                       " clips), one-sided p " + fmt("%.2e", p)};
}

// --- 9 ------------------------------------------------------------------

Outcome vae_robustness(const Context& ctx) {
    const auto config = desk_config();
    const pipeline::Workspace ws(ctx.workdir);
    const auto stage = pipeline::ensure_vae(config, ws, ctx.log());
    const auto ck = ckpt::load(stage.checkpoint);
    const double recorded = ck.meta.metricsSnapshot.at("sketchLatentCorrelation").get<double>();
    auto vae = pipeline::load_vae(config, stage.checkpoint);
    const auto dataRoot = pipeline::ensure_data(config, ws, ctx.log());
    std::vector<VideoTensor> clips;
    for (const auto& c : data::load_split(config, dataRoot, data::Split::test, config.data.testClips)) {
        clips.push_back(c.video);
    }
    const double heldOut = pipeline::sketch_latent_correlation(vae, clips, config);
    return {heldOut > recorded - 0.05, "held-out |r| " + fmt("%.3f", heldOut) + " vs recorded " +
                                           fmt("%.3f", recorded) + " - 0.05"};
}

// --- 10 -----------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome reproducibility(const Context& ctx) {
    const auto config = preset_config("smoke");
    std::vector<std::map<std::string, std::string>> runs;
    for (int run = 0; run < 2; ++run) {
        const auto root = ctx.workdir / "repro" / ("run" + std::to_string(run));
        fs::remove_all(root);
        const pipeline::Workspace ws(root);
        pipeline::gen_data(config, ws.data_dir(config), false, ctx.log());
        pipeline::train_vae(config, ws, ctx.log());
        const auto base = pipeline::train_base(config, ws, ctx.log());
        pipeline::finetune_sketch(config, ws, base.checkpoint, ctx.log());
        std::map<std::string, std::string> files;
        for (const auto& e : fs::directory_iterator(root / "checkpoints")) {
            files[e.path().filename().string()] = file_bytes(e.path());
        }
        runs.push_back(files);
    }
    const bool same = runs[0] == runs[1] && runs[0].size() == 4;
    return {same, std::to_string(runs[0].size()) + " checkpoints per run, " +
                      (same ? "bitwise identical" : "DIFFERENT")};
}

struct Criterion {
    int id;
    const char* title;
    std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    at::set_num_threads(1);
    at::set_num_interop_threads(1);

    CLI::App app{"Acceptance suite"};
    std::vector<int> only;
    Context ctx;
    ctx.workdir = pipeline::default_workspace_root();
    app.add_option("--only", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
    app.add_option("--workdir", ctx.workdir, "Workspace for trained artefacts");
    app.add_flag("-q,--quiet", ctx.quiet, "Suppress progress output");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "zero-init conditioning invariant", zero_init},
        {2, "LoRA algebra", lora_algebra},
        {3, "gradient correctness", gradients},
        {4, "shape laws", shape_laws},
        {5, "metric oracles", metric_oracles},
        {6, "end-to-end effectiveness", end_to_end},
        {7, "efficiency comparison", efficiency},
        {8, "frame-difficulty trend", frame_trend},
        {9, "frozen-VAE sketch robustness", vae_robustness},
        {10, "reproducibility", reproducibility},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failed = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("criterion %2d: %s  %s: %s [%.1f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.title,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
