#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>
#include <torch/torch.h>

#include "sketchcolour/config.hpp"
#include "sketchcolour/tensor_types.hpp"

namespace sketchcolour::metrics {

inline constexpr double kPsnrCap = 100.0;

/// rgb: mean over frames and pixels of the per-pixel sum of squared channel
/// errors on the 0-255 scale. yuvChroma: mean squared error of U and V only.
double msce(const VideoTensor& pred, const VideoTensor& gt, MsceMode mode = MsceMode::rgb);
std::vector<double> msce_per_frame(const VideoTensor& pred, const VideoTensor& gt, MsceMode mode = MsceMode::rgb);

/// Mean over frames of 10 log10(255^2 / MSE), identical frames scoring kPsnrCap.
double psnr(const VideoTensor& pred, const VideoTensor& gt);

struct SsimOptions {
    int64_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 255.0;
};

/// Single-scale SSIM on one luminance plane (H x W, values on the `range` scale),
/// averaged over the valid window positions.
double ssim_plane(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});
/// Frame-averaged SSIM on Rec. 601 luminance.
double ssim(const VideoTensor& pred, const VideoTensor& gt, const SsimOptions& options = {});

struct FeatureExtractorSpec {
    enum class Kind { randomConv3d, external };
    Kind kind = Kind::randomConv3d;
    uint64_t seed = 1234;
    int64_t featureDim = 256;
};

/// Multi-scale per-frame features tagged with the seed of their extractor.
struct FeatureStack {
    uint64_t seed = 0;
    std::vector<torch::Tensor> layers;  // each C x h x w, unit-normalised over C
};

/// Frozen, seeded random convolution networks standing in for the pretrained
/// perceptual and video backbones.
class FeatureExtractor {
public:
    explicit FeatureExtractor(const FeatureExtractorSpec& spec);

    const FeatureExtractorSpec& spec() const { return spec_; }
    FeatureStack frame_features(const torch::Tensor& frame) const;  // H x W x 3 in [0,1]
    Eigen::VectorXd clip_features(const VideoTensor& clip) const;

private:
    FeatureExtractorSpec spec_;
    std::vector<torch::Tensor> frameConvs_;
    std::vector<torch::Tensor> clipConvs_;
};

/// Throws ContractError when the stacks come from different extractors.
double lpips_distance(const FeatureStack& a, const FeatureStack& b);
double lpips_proxy(const VideoTensor& pred, const VideoTensor& gt, const FeatureExtractor& extractor);

/// |mu1 - mu2|^2 + tr(c1 + c2 - 2 (c1 c2)^(1/2)).
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2);

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Rows are samples. Covariance is shrunk toward its diagonal: (1 - l) C + l diag(C).
GaussianFit fit_gaussian(const Eigen::MatrixXd& features, double shrinkage = 0.01);

double fvd_from_features(const Eigen::MatrixXd& predFeatures, const Eigen::MatrixXd& gtFeatures);
double fvd(const std::vector<VideoTensor>& predSet, const std::vector<VideoTensor>& gtSet,
           const FeatureExtractor& extractor);

struct ClipMetrics {
    double msce = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double lpips = 0.0;
    int64_t framesEvaluated = 0;
};

struct Summary {
    double mean = 0.0;
    double std = 0.0;
};

struct MetricReport {
    std::map<std::string, ClipMetrics> perClip;
    std::map<std::string, Summary> aggregate;  // msce, psnr, ssim, lpips
    double fvd = 0.0;
    bool fvdAvailable = false;
    MsceMode msceMode = MsceMode::rgb;
    std::vector<std::string> missing;
    bool partial = false;
};

void to_json(nlohmann::json& j, const MetricReport& r);

/// Mean (+- std) table with one row per labelled report.
std::string format_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

struct ClipPair {
    std::string clipId;
    VideoTensor pred;
    VideoTensor gt;
};

/// Rescales each prediction to its ground truth's resolution, truncates both to
/// the shorter frame count and computes all metrics.
MetricReport evaluate_pairs(const std::vector<ClipPair>& pairs, const EvalConfig& config);

/// Matches clip directories by name under two roots.
MetricReport evaluate(const std::filesystem::path& predRoot, const std::filesystem::path& gtRoot,
                      const EvalConfig& config);

}  // namespace sketchcolour::metrics
