#include "sketchcolour/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <vector>

#include "sketchcolour/errors.hpp"

namespace sketchcolour::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'K', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((static_cast<uint64_t>(value) >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw IoError("checkpoint truncated");
    }
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<uint64_t>(bytes[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

std::vector<float> float_data(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    std::vector<float> v(static_cast<size_t>(c.numel()));
    if (!v.empty()) {
        std::memcpy(v.data(), c.data_ptr<float>(), v.size() * sizeof(float));
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& f : v) {
            f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<uint32_t>(f)));
        }
    }
    return v;
}

}  // namespace

void save(const fs::path& path, const Checkpoint& checkpoint) {
    json table = json::array();
    uint64_t offset = 0;
    for (const auto& [name, tensor] : checkpoint.tensors) {
        const uint64_t bytes = static_cast<uint64_t>(tensor.numel()) * sizeof(float);
        table.push_back({{"name", name}, {"shape", tensor.sizes().vec()}, {"offset", offset}, {"bytes", bytes}});
        offset += bytes;
    }
    json header{{"meta",
                 {{"configHash", checkpoint.meta.configHash},
                  {"stage", std::string(to_string(checkpoint.meta.stage))},
                  {"step", checkpoint.meta.step},
                  {"metricsSnapshot", checkpoint.meta.metricsSnapshot},
                  {"config", checkpoint.meta.config}}},
                {"tensors", table}};
    const std::string text = header.dump();

    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write checkpoint " + tmp.string());
        }
        out.write(kMagic, sizeof kMagic);
        put_le<uint32_t>(out, kVersion);
        put_le<uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, tensor] : checkpoint.tensors) {
            const auto data = float_data(tensor);
            out.write(reinterpret_cast<const char*>(data.data()),
                      static_cast<std::streamsize>(data.size() * sizeof(float)));
        }
        if (!out) {
            throw IoError("failed writing checkpoint " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

Checkpoint load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw IoError(path.string() + " is not a checkpoint");
    }
    const auto version = get_le<uint32_t>(in);
    if (version != kVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto headerLen = get_le<uint64_t>(in);
    std::string text(headerLen, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(headerLen))) {
        throw IoError("checkpoint header truncated");
    }
    const auto header = json::parse(text, nullptr, false);
    if (header.is_discarded()) {
        throw IoError("checkpoint header is not valid JSON");
    }
    Checkpoint ck;
    const auto& meta = header.at("meta");
    ck.meta.configHash = meta.at("configHash").get<std::string>();
    ck.meta.stage = stage_from_string(meta.at("stage").get<std::string>());
    ck.meta.step = meta.at("step").get<int64_t>();
    ck.meta.metricsSnapshot = meta.at("metricsSnapshot");
    ck.meta.config = meta.value("config", json::object());

    const auto dataStart = in.tellg();
    for (const auto& entry : header.at("tensors")) {
        const auto shape = entry.at("shape").get<std::vector<int64_t>>();
        const auto offset = entry.at("offset").get<uint64_t>();
        const auto bytes = entry.at("bytes").get<uint64_t>();
        auto t = torch::empty(shape, torch::kFloat32);
        if (static_cast<uint64_t>(t.numel()) * sizeof(float) != bytes) {
            throw IoError("checkpoint tensor " + entry.at("name").get<std::string>() + " has inconsistent size");
        }
        in.seekg(dataStart + static_cast<std::streamoff>(offset));
        if (bytes > 0 && !in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(bytes))) {
            throw IoError("checkpoint data truncated");
        }
        if constexpr (std::endian::native == std::endian::big) {
            auto* p = reinterpret_cast<uint32_t*>(t.data_ptr<float>());
            for (int64_t i = 0; i < t.numel(); ++i) {
                p[i] = __builtin_bswap32(p[i]);
            }
        }
        ck.tensors.emplace(entry.at("name").get<std::string>(), t);
    }
    return ck;
}

Checkpoint load_checked(const fs::path& path, Stage stage, const std::string& configHash) {
    auto ck = load(path);
    if (ck.meta.stage != stage) {
        throw ContractError("checkpoint " + path.string() + " has stage " + std::string(to_string(ck.meta.stage)) +
                            ", expected " + std::string(to_string(stage)));
    }
    if (ck.meta.configHash != configHash) {
        throw ContractError("checkpoint " + path.string() + " was produced by config " + ck.meta.configHash +
                            ", current config hashes to " + configHash);
    }
    return ck;
}

TensorMap state_of(const torch::nn::Module& module) {
    TensorMap out;
    for (const auto& item : module.named_parameters(true)) {
        out.emplace(item.key(), item.value().detach().to(torch::kFloat32).clone());
    }
    for (const auto& item : module.named_buffers(true)) {
        out.emplace(item.key(), item.value().detach().to(torch::kFloat32).clone());
    }
    return out;
}

TensorMap trainable_state(const torch::nn::Module& module) {
    TensorMap out;
    for (const auto& item : module.named_parameters(true)) {
        if (item.value().requires_grad()) {
            out.emplace(item.key(), item.value().detach().to(torch::kFloat32).clone());
        }
    }
    return out;
}

void load_state(torch::nn::Module& module, const TensorMap& tensors, bool strict) {
    torch::NoGradGuard guard;
    std::set<std::string> seen;
    auto assign = [&](const std::string& name, torch::Tensor& dst) {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            if (strict) {
                throw ContractError("checkpoint lacks tensor " + name);
            }
            return;
        }
        if (it->second.sizes() != dst.sizes()) {
            throw ContractError("checkpoint tensor " + name + " has a different shape");
        }
        dst.copy_(it->second);
        seen.insert(name);
    };
    for (auto& item : module.named_parameters(true)) {
        assign(item.key(), item.value());
    }
    for (auto& item : module.named_buffers(true)) {
        assign(item.key(), item.value());
    }
    if (strict && seen.size() != tensors.size()) {
        for (const auto& [name, t] : tensors) {
            if (!seen.count(name)) {
                throw ContractError("checkpoint tensor " + name + " has no counterpart in the model");
            }
        }
    }
}

}  // namespace sketchcolour::ckpt
