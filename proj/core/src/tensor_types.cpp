#include "sketchcolour/tensor_types.hpp"

#include <torch/torch.h>

#include "sketchcolour/errors.hpp"

namespace sketchcolour {

VideoTensor::VideoTensor(torch::Tensor data) : data_(std::move(data)) {
    if (data_.dim() != 4 || data_.size(3) != 3) {
        throw DimensionError("video tensor must be frames x H x W x 3, got " +
                             std::to_string(data_.dim()) + "-d tensor");
    }
    if (data_.size(0) < 1 || data_.size(1) < 1 || data_.size(2) < 1) {
        throw DimensionError("video tensor has an empty axis");
    }
    if (data_.scalar_type() != torch::kFloat32) {
        data_ = data_.to(torch::kFloat32);
    }
    data_ = data_.contiguous();
    auto [lo, hi] = torch::aminmax(data_);
    if (lo.item<float>() < 0.0f || hi.item<float>() > 1.0f) {
        throw ContractError("video values must lie in [0,1]");
    }
}

VideoTensor VideoTensor::frame(int64_t index) const {
    return slice(index, 1);
}

VideoTensor VideoTensor::slice(int64_t start, int64_t count) const {
    if (start < 0 || count < 1 || start + count > frames()) {
        throw DimensionError("frame slice [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") outside clip of " +
                             std::to_string(frames()) + " frames");
    }
    return VideoTensor(data_.narrow(0, start, count).clone());
}

torch::Tensor VideoTensor::to_ncdhw() const {
    return data_.permute({3, 0, 1, 2}).unsqueeze(0).contiguous();
}

VideoTensor VideoTensor::from_ncdhw(const torch::Tensor& batched) {
    if (batched.dim() != 5 || batched.size(0) != 1) {
        throw DimensionError("expected a [1, 3, T, H, W] tensor");
    }
    return VideoTensor(batched.squeeze(0).permute({1, 2, 3, 0}).contiguous());
}

LatentTensor::LatentTensor(torch::Tensor data) : data_(std::move(data)) {
    if (data_.dim() != 4) {
        throw DimensionError("latent tensor must be frames x H x W x channels, got " +
                             std::to_string(data_.dim()) + "-d tensor");
    }
    data_ = data_.contiguous();
}

torch::Tensor LatentTensor::to_ncdhw() const {
    return data_.permute({3, 0, 1, 2}).unsqueeze(0).contiguous();
}

LatentTensor LatentTensor::from_ncdhw(const torch::Tensor& batched) {
    if (batched.dim() != 5 || batched.size(0) != 1) {
        throw DimensionError("expected a [1, C, T, H, W] tensor");
    }
    return LatentTensor(batched.squeeze(0).permute({1, 2, 3, 0}).contiguous());
}

}  // namespace sketchcolour
