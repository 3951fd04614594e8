#pragma once

#include <torch/types.h>

#include "sketchcolour/config.hpp"
#include "sketchcolour/tensor_types.hpp"

namespace sketchcolour::sketch {

/// Rec. 601 luma of an H x W x 3 frame, as H x W.
torch::Tensor luminance(const torch::Tensor& frame);

/// Truncated (radius ceil(3 sigma)), normalised 1-D Gaussian taps.
std::vector<double> gaussian_taps(double sigma);

/// Separable Gaussian blur of an H x W plane with replicated borders.
torch::Tensor gaussian_blur(const torch::Tensor& plane, double sigma);

/// Line art from a colour frame: luminance, difference of Gaussians, magnitude
/// threshold, soft edge strength. Returns H x W in [0,1]; with `invert` lines
/// are dark on a white background.
torch::Tensor extract_sketch(const torch::Tensor& frame, const SketchConfig& config);

/// 1 where sketch >= threshold, else 0.
torch::Tensor binarize(const torch::Tensor& sketch, double threshold);

/// Per-frame binary sketch replicated to three identical channels.
VideoTensor sketch_video(const VideoTensor& video, const SketchConfig& config);

/// True when every value is exactly 0 or 1.
bool is_binary(const torch::Tensor& values);

}  // namespace sketchcolour::sketch
