#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/types.h>

#include "sketchcolour/tensor_types.hpp"

namespace sketchcolour::io {

/// Reads any 8-bit PNG (gray, RGB, with or without alpha) as H x W x 3 float in [0,1].
torch::Tensor read_png(const std::filesystem::path& path);

/// Writes an H x W x C (C = 1 or 3) float tensor in [0,1] as an 8-bit PNG.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// `frame_00000.png` style name for a frame index.
std::string frame_filename(int64_t index);

/// Sorted list of frame_*.png files in a directory.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

VideoTensor read_frame_dir(const std::filesystem::path& dir);
void write_frame_dir(const std::filesystem::path& dir, const VideoTensor& video);
/// Writes frames of an arbitrary T x H x W x C tensor (C = 1 or 3), numbering from `first`.
void write_frames(const std::filesystem::path& dir, const torch::Tensor& frames, int64_t first = 0,
                  const std::string& prefix = "frame_");

}  // namespace sketchcolour::io
