#pragma once

#include <cstdint>

#include <torch/types.h>

namespace sketchcolour {

/// A clip in pixel space: frames x height x width x 3, float32, values in [0,1].
class VideoTensor {
public:
    VideoTensor() = default;
    /// Validates rank, channel count and value range.
    explicit VideoTensor(torch::Tensor data);

    const torch::Tensor& data() const noexcept { return data_; }
    bool defined() const noexcept { return data_.defined(); }

    int64_t frames() const { return data_.size(0); }
    int64_t height() const { return data_.size(1); }
    int64_t width() const { return data_.size(2); }

    /// Single frame as a 1 x H x W x 3 clip.
    VideoTensor frame(int64_t index) const;
    /// Contiguous sub-range of frames [start, start + count).
    VideoTensor slice(int64_t start, int64_t count) const;

    /// Batched channels-first view [1, 3, T, H, W] used by convolutional code.
    torch::Tensor to_ncdhw() const;
    static VideoTensor from_ncdhw(const torch::Tensor& batched);

private:
    torch::Tensor data_;
};

/// A VAE latent: latentFrames x latentH x latentW x channels, float32.
class LatentTensor {
public:
    LatentTensor() = default;
    explicit LatentTensor(torch::Tensor data);

    const torch::Tensor& data() const noexcept { return data_; }
    bool defined() const noexcept { return data_.defined(); }

    int64_t frames() const { return data_.size(0); }
    int64_t height() const { return data_.size(1); }
    int64_t width() const { return data_.size(2); }
    int64_t channels() const { return data_.size(3); }

    torch::Tensor to_ncdhw() const;
    static LatentTensor from_ncdhw(const torch::Tensor& batched);

private:
    torch::Tensor data_;
};

}  // namespace sketchcolour
