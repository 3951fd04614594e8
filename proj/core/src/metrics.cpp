#include "sketchcolour/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "sketchcolour/dataset.hpp"
#include "sketchcolour/errors.hpp"
#include "sketchcolour/image_io.hpp"
#include "sketchcolour/stats.hpp"

namespace sketchcolour::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_same(const VideoTensor& pred, const VideoTensor& gt) {
    if (!pred.defined() || !gt.defined() || pred.data().sizes() != gt.data().sizes()) {
        throw DimensionError("prediction and ground truth shapes differ");
    }
}

torch::Tensor to255(const VideoTensor& v) { return v.data().to(torch::kFloat64) * 255.0; }

// BT.601 chroma rows (analog YUV) applied to RGB.
torch::Tensor chroma(const torch::Tensor& rgb) {
    auto r = rgb.select(-1, 0);
    auto g = rgb.select(-1, 1);
    auto b = rgb.select(-1, 2);
    auto u = -0.14713 * r - 0.28886 * g + 0.436 * b;
    auto v = 0.615 * r - 0.51499 * g - 0.10001 * b;
    return torch::stack({u, v}, -1);
}

torch::Tensor luma255(const torch::Tensor& frame) {
    auto f = frame.to(torch::kFloat64) * 255.0;
    return 0.299 * f.select(-1, 0) + 0.587 * f.select(-1, 1) + 0.114 * f.select(-1, 2);
}

std::vector<double> window_taps(int64_t size, double sigma) {
    std::vector<double> taps(static_cast<size_t>(size));
    const double centre = static_cast<double>(size - 1) / 2.0;
    double sum = 0.0;
    for (int64_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - centre;
        taps[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += taps[i];
    }
    for (auto& t : taps) {
        t /= sum;
    }
    return taps;
}

// Valid-region separable filtering of an H x W double plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int64_t h, int64_t w,
                                 const std::vector<double>& taps) {
    const int64_t k = static_cast<int64_t>(taps.size());
    const int64_t oh = h - k + 1;
    const int64_t ow = w - k + 1;
    std::vector<double> rows(static_cast<size_t>(h * ow));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int64_t i = 0; i < k; ++i) {
                acc += taps[i] * plane[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<size_t>(oh * ow));
    for (int64_t y = 0; y < oh; ++y) {
        for (int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int64_t i = 0; i < k; ++i) {
                acc += taps[i] * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    return out;
}

torch::Tensor seeded_weights(at::Generator& gen, std::vector<int64_t> shape) {
    int64_t fanIn = 1;
    for (size_t i = 1; i < shape.size(); ++i) {
        fanIn *= shape[i];
    }
    return torch::randn(shape, gen, torch::kFloat64) * std::sqrt(2.0 / static_cast<double>(fanIn));
}

torch::Tensor unit_normalise(const torch::Tensor& x) {
    return x / (x.pow(2).sum(0, true).sqrt() + 1e-10);
}

}  // namespace

std::vector<double> msce_per_frame(const VideoTensor& pred, const VideoTensor& gt, MsceMode mode) {
    check_same(pred, gt);
    auto p = to255(pred);
    auto g = to255(gt);
    torch::Tensor perFrame;
    if (mode == MsceMode::rgb) {
        perFrame = (p - g).pow(2).sum(-1).mean({1, 2});
    } else {
        perFrame = (chroma(p) - chroma(g)).pow(2).mean({1, 2, 3});
    }
    perFrame = perFrame.contiguous();
    return {perFrame.data_ptr<double>(), perFrame.data_ptr<double>() + perFrame.numel()};
}

double msce(const VideoTensor& pred, const VideoTensor& gt, MsceMode mode) {
    const auto frames = msce_per_frame(pred, gt, mode);
    return stats::mean(frames);
}

double psnr(const VideoTensor& pred, const VideoTensor& gt) {
    check_same(pred, gt);
    auto mse = (to255(pred) - to255(gt)).pow(2).mean({1, 2, 3}).contiguous();
    double total = 0.0;
    for (int64_t t = 0; t < mse.numel(); ++t) {
        const double m = mse.data_ptr<double>()[t];
        total += m <= 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / m));
    }
    return total / static_cast<double>(mse.numel());
}

double ssim_plane(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& o) {
    if (a.sizes() != b.sizes() || a.dim() != 2) {
        throw DimensionError("ssim expects two equally sized planes");
    }
    const int64_t h = a.size(0);
    const int64_t w = a.size(1);
    if (h < o.window || w < o.window) {
        throw DegenerateInputError("frame " + std::to_string(h) + "x" + std::to_string(w) +
                                   " is smaller than the " + std::to_string(o.window) + "-pixel SSIM window");
    }
    auto ac = a.to(torch::kFloat64).contiguous();
    auto bc = b.to(torch::kFloat64).contiguous();
    const size_t n = static_cast<size_t>(h * w);
    std::vector<double> x(ac.data_ptr<double>(), ac.data_ptr<double>() + n);
    std::vector<double> y(bc.data_ptr<double>(), bc.data_ptr<double>() + n);
    std::vector<double> xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto taps = window_taps(o.window, o.sigma);
    const auto mx = filter_valid(x, h, w, taps);
    const auto my = filter_valid(y, h, w, taps);
    const auto exx = filter_valid(xx, h, w, taps);
    const auto eyy = filter_valid(yy, h, w, taps);
    const auto exy = filter_valid(xy, h, w, taps);
    const double c1 = (o.k1 * o.range) * (o.k1 * o.range);
    const double c2 = (o.k2 * o.range) * (o.k2 * o.range);
    double total = 0.0;
    for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = exx[i] - mx[i] * mx[i];
        const double vy = eyy[i] - my[i] * my[i];
        const double cxy = exy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

double ssim(const VideoTensor& pred, const VideoTensor& gt, const SsimOptions& options) {
    check_same(pred, gt);
    double total = 0.0;
    for (int64_t t = 0; t < pred.frames(); ++t) {
        total += ssim_plane(luma255(pred.data()[t]), luma255(gt.data()[t]), options);
    }
    return total / static_cast<double>(pred.frames());
}

FeatureExtractor::FeatureExtractor(const FeatureExtractorSpec& spec) : spec_(spec) {
    if (spec.featureDim < 2 || spec.featureDim % 2 != 0) {
        throw ConfigError("featureDim must be an even number >= 2");
    }
    auto gen = at::make_generator<at::CPUGeneratorImpl>(spec.seed);
    frameConvs_.push_back(seeded_weights(gen, {16, 3, 3, 3}));
    frameConvs_.push_back(seeded_weights(gen, {32, 16, 3, 3}));
    frameConvs_.push_back(seeded_weights(gen, {64, 32, 3, 3}));
    clipConvs_.push_back(seeded_weights(gen, {64, 3, 3, 3, 3}));
    clipConvs_.push_back(seeded_weights(gen, {spec.featureDim / 2, 64, 3, 3, 3}));
}

FeatureStack FeatureExtractor::frame_features(const torch::Tensor& frame) const {
    torch::NoGradGuard guard;
    FeatureStack stack{spec_.seed, {}};
    auto x = (frame.to(torch::kFloat64).permute({2, 0, 1}) * 2.0 - 1.0).unsqueeze(0);
    for (size_t i = 0; i < frameConvs_.size(); ++i) {
        x = torch::relu(torch::conv2d(x, frameConvs_[i], {}, 1, 1));
        stack.layers.push_back(unit_normalise(x[0]));
        if (i + 1 < frameConvs_.size()) {
            if (x.size(2) < 2 || x.size(3) < 2) {
                break;
            }
            x = torch::avg_pool2d(x, 2);
        }
    }
    return stack;
}

Eigen::VectorXd FeatureExtractor::clip_features(const VideoTensor& clip) const {
    if (spec_.kind == FeatureExtractorSpec::Kind::external) {
        throw ContractError("external feature extractor: supply precomputed features to fvd_from_features");
    }
    torch::NoGradGuard guard;
    auto x = clip.to_ncdhw().to(torch::kFloat64) * 2.0 - 1.0;
    x = torch::relu(torch::conv3d(x, clipConvs_[0], {}, {1, 2, 2}, 1));
    x = torch::relu(torch::conv3d(x, clipConvs_[1], {}, {2, 2, 2}, 1));
    auto flat = x[0].flatten(1);
    auto feats = torch::cat({flat.mean(1), flat.std(1, false)}).contiguous();
    Eigen::VectorXd v(feats.numel());
    std::copy(feats.data_ptr<double>(), feats.data_ptr<double>() + feats.numel(), v.data());
    return v;
}

double lpips_distance(const FeatureStack& a, const FeatureStack& b) {
    if (a.seed != b.seed) {
        throw ContractError("LPIPS features come from different extractors; both sides must share one");
    }
    if (a.layers.size() != b.layers.size()) {
        throw DimensionError("LPIPS feature stacks differ in depth");
    }
    double total = 0.0;
    for (size_t i = 0; i < a.layers.size(); ++i) {
        if (a.layers[i].sizes() != b.layers[i].sizes()) {
            throw DimensionError("LPIPS feature maps differ in shape");
        }
        total += (a.layers[i] - b.layers[i]).pow(2).sum(0).mean().item<double>();
    }
    return total;
}

double lpips_proxy(const VideoTensor& pred, const VideoTensor& gt, const FeatureExtractor& extractor) {
    check_same(pred, gt);
    double total = 0.0;
    for (int64_t t = 0; t < pred.frames(); ++t) {
        total += lpips_distance(extractor.frame_features(pred.data()[t]), extractor.frame_features(gt.data()[t]));
    }
    return total / static_cast<double>(pred.frames());
}

namespace {

Eigen::MatrixXd checked_symmetric(const Eigen::MatrixXd& c, const char* name) {
    if (!c.allFinite()) {
        throw NumericError(std::string(name) + " contains non-finite values");
    }
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
        throw NumericError(std::string(name) + " is not symmetric");
    }
    return 0.5 * (c + c.transpose());
}

Eigen::VectorXd clipped_eigenvalues(const Eigen::MatrixXd& m, const char* name) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    if (solver.info() != Eigen::Success) {
        throw NumericError(std::string("eigendecomposition failed for ") + name);
    }
    Eigen::VectorXd ev = solver.eigenvalues();
    const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -tol) {
            throw NumericError(std::string(name) + " is not positive semi-definite");
        }
        ev[i] = std::max(0.0, ev[i]);
    }
    return ev;
}

}  // namespace

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2) {
    const auto d = mu1.size();
    if (mu2.size() != d || cov1.rows() != d || cov1.cols() != d || cov2.rows() != d || cov2.cols() != d) {
        throw DimensionError("frechet_distance: inconsistent dimensions");
    }
    if (!mu1.allFinite() || !mu2.allFinite()) {
        throw NumericError("frechet_distance: non-finite mean");
    }
    const auto c1 = checked_symmetric(cov1, "cov1");
    const auto c2 = checked_symmetric(cov2, "cov2");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(c1);
    if (solver.info() != Eigen::Success) {
        throw NumericError("eigendecomposition failed for cov1");
    }
    Eigen::VectorXd ev1 = clipped_eigenvalues(c1, "cov1");
    const Eigen::MatrixXd root1 = solver.eigenvectors() * ev1.cwiseSqrt().asDiagonal() * solver.eigenvectors().transpose();
    Eigen::MatrixXd product = root1 * c2 * root1;
    product = 0.5 * (product + product.transpose());
    const Eigen::VectorXd evp = clipped_eigenvalues(product, "covariance product");

    const double meanTerm = (mu1 - mu2).squaredNorm();
    const double value = meanTerm + c1.trace() + c2.trace() - 2.0 * evp.cwiseSqrt().sum();
    return std::max(0.0, value);
}

GaussianFit fit_gaussian(const Eigen::MatrixXd& features, double shrinkage) {
    if (features.rows() < 2) {
        throw DegenerateInputError("covariance needs at least two clips, got " + std::to_string(features.rows()));
    }
    GaussianFit fit;
    fit.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centred = features.rowwise() - fit.mean.transpose();
    Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(features.rows() - 1);
    Eigen::MatrixXd diag = cov.diagonal().asDiagonal();
    fit.cov = (1.0 - shrinkage) * cov + shrinkage * diag;
    return fit;
}

double fvd_from_features(const Eigen::MatrixXd& predFeatures, const Eigen::MatrixXd& gtFeatures) {
    const auto a = fit_gaussian(predFeatures);
    const auto b = fit_gaussian(gtFeatures);
    return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

double fvd(const std::vector<VideoTensor>& predSet, const std::vector<VideoTensor>& gtSet,
           const FeatureExtractor& extractor) {
    if (predSet.empty() || gtSet.empty()) {
        throw DegenerateInputError("fvd needs two nonempty sets");
    }
    auto features = [&](const std::vector<VideoTensor>& set) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), extractor.spec().featureDim);
        for (size_t i = 0; i < set.size(); ++i) {
            m.row(static_cast<Eigen::Index>(i)) = extractor.clip_features(set[i]).transpose();
        }
        return m;
    };
    return fvd_from_features(features(predSet), features(gtSet));
}

void to_json(json& j, const MetricReport& r) {
    json perClip = json::object();
    for (const auto& [id, m] : r.perClip) {
        perClip[id] = {{"msce", m.msce},
                       {"psnr", m.psnr},
                       {"ssim", m.ssim},
                       {"lpips", m.lpips},
                       {"framesEvaluated", m.framesEvaluated}};
    }
    json aggregate = json::object();
    for (const auto& [name, s] : r.aggregate) {
        aggregate[name] = {{"mean", s.mean}, {"std", s.std}};
    }
    j = json{{"perClip", perClip},
             {"aggregate", aggregate},
             {"fvd", r.fvdAvailable ? json(r.fvd) : json(nullptr)},
             {"msceMode", r.msceMode == MsceMode::rgb ? "rgb" : "yuvChroma"},
             {"featureBackbone", "randomConv proxy"},
             {"missing", r.missing},
             {"partial", r.partial}};
}

std::string format_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::ostringstream out;
    out << "| Method | MSCE (lower) | PSNR (higher) | SSIM (higher) | LPIPS* (lower) | FVD* (lower) |\n";
    out << "|---|---|---|---|---|---|\n";
    char buf[64];
    for (const auto& [label, report] : rows) {
        out << "| " << label;
        for (const char* name : {"msce", "psnr", "ssim", "lpips"}) {
            auto it = report.aggregate.find(name);
            if (it == report.aggregate.end()) {
                out << " | n/a";
            } else {
                std::snprintf(buf, sizeof buf, " | %.4g (± %.3g)", it->second.mean, it->second.std);
                out << buf;
            }
        }
        if (report.fvdAvailable) {
            std::snprintf(buf, sizeof buf, " | %.4g |\n", report.fvd);
            out << buf;
        } else {
            out << " | n/a |\n";
        }
    }
    out << "* proxy backbones (frozen random convolutions); MSCE mode: "
        << (rows.empty() || rows.front().second.msceMode == MsceMode::rgb ? "rgb" : "yuvChroma") << "\n";
    return out.str();
}

MetricReport evaluate_pairs(const std::vector<ClipPair>& pairs, const EvalConfig& config) {
    MetricReport report;
    report.msceMode = config.msceMode;
    FeatureExtractor extractor({FeatureExtractorSpec::Kind::randomConv3d, config.featureSeed, config.featureDim});
    std::vector<VideoTensor> preds;
    std::vector<VideoTensor> gts;
    std::map<std::string, std::vector<double>> columns;
    for (const auto& pair : pairs) {
        VideoTensor pred = pair.pred;
        if (pred.height() != pair.gt.height() || pred.width() != pair.gt.width()) {
            std::vector<torch::Tensor> frames;
            for (int64_t t = 0; t < pred.frames(); ++t) {
                frames.push_back(
                    data::resize_bilinear(pred.data()[t], pair.gt.height(), pair.gt.width()).clamp(0.0, 1.0));
            }
            pred = VideoTensor(torch::stack(frames));
        }
        const int64_t n = std::min(pred.frames(), pair.gt.frames());
        pred = pred.slice(0, n);
        const VideoTensor gt = pair.gt.slice(0, n);
        ClipMetrics m;
        m.msce = msce(pred, gt, config.msceMode);
        m.psnr = psnr(pred, gt);
        m.ssim = ssim(pred, gt);
        m.lpips = lpips_proxy(pred, gt, extractor);
        m.framesEvaluated = n;
        report.perClip[pair.clipId] = m;
        columns["msce"].push_back(m.msce);
        columns["psnr"].push_back(m.psnr);
        columns["ssim"].push_back(m.ssim);
        columns["lpips"].push_back(m.lpips);
        preds.push_back(pred);
        gts.push_back(gt);
    }
    for (const auto& [name, values] : columns) {
        report.aggregate[name] = {stats::mean(values), stats::stddev(values)};
    }
    if (preds.size() >= 2) {
        report.fvd = fvd(preds, gts, extractor);
        report.fvdAvailable = true;
    }
    return report;
}

MetricReport evaluate(const fs::path& predRoot, const fs::path& gtRoot, const EvalConfig& config) {
    auto clip_dirs = [](const fs::path& root) {
        std::set<std::string> ids;
        if (!fs::is_directory(root)) {
            throw IoError("not a directory: " + root.string());
        }
        for (const auto& entry : fs::directory_iterator(root)) {
            if (entry.is_directory() && !io::list_frames(entry.path()).empty()) {
                ids.insert(entry.path().filename().string());
            }
        }
        return ids;
    };
    const auto predIds = clip_dirs(predRoot);
    const auto gtIds = clip_dirs(gtRoot);
    std::vector<ClipPair> pairs;
    std::vector<std::string> missing;
    for (const auto& id : gtIds) {
        if (predIds.count(id)) {
            pairs.push_back({id, io::read_frame_dir(predRoot / id), io::read_frame_dir(gtRoot / id)});
        } else {
            missing.push_back(id);
        }
    }
    for (const auto& id : predIds) {
        if (!gtIds.count(id)) {
            missing.push_back(id);
        }
    }
    if (pairs.empty()) {
        throw ContractError("no clip ids match between " + predRoot.string() + " and " + gtRoot.string());
    }
    auto report = evaluate_pairs(pairs, config);
    report.missing = missing;
    report.partial = !missing.empty();
    return report;
}

}  // namespace sketchcolour::metrics
