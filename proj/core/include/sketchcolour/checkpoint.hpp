#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "sketchcolour/config.hpp"

namespace sketchcolour::ckpt {

struct Metadata {
    std::string configHash;
    Stage stage = Stage::vae;
    int64_t step = 0;
    nlohmann::json metricsSnapshot = nlohmann::json::object();
    // Full experiment config that produced the weights.
    nlohmann::json config = nlohmann::json::object();
};

using TensorMap = std::map<std::string, torch::Tensor>;

struct Checkpoint {
    Metadata meta;
    TensorMap tensors;
};

/// Layout: 8-byte magic, u32 version, u64 header length, JSON header, then
/// little-endian float32 tensor data in name order. Writes atomically.
void save(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load(const std::filesystem::path& path);

/// Loads and checks the stage tag and config hash; mismatches throw ContractError.
Checkpoint load_checked(const std::filesystem::path& path, Stage stage, const std::string& configHash);

/// Parameters and buffers by dotted name, detached float32 copies.
TensorMap state_of(const torch::nn::Module& module);
/// Copies tensors into the module's parameters and buffers. With `strict`,
/// missing or unexpected names throw ContractError.
void load_state(torch::nn::Module& module, const TensorMap& tensors, bool strict = true);

/// Only the parameters that currently require gradients.
TensorMap trainable_state(const torch::nn::Module& module);

}  // namespace sketchcolour::ckpt
