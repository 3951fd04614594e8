#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include <torch/torch.h>

#include "sketchcolour/checkpoint.hpp"
#include "sketchcolour/errors.hpp"

using namespace sketchcolour;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "sketchcolour-unit";
    fs::create_directories(dir);
    return dir / name;
}

ckpt::Checkpoint sample_checkpoint() {
    ckpt::Checkpoint ck;
    ck.meta.configHash = "0123456789abcdef";
    ck.meta.stage = Stage::baseA;
    ck.meta.step = 42;
    ck.meta.metricsSnapshot = {{"loss", 0.5}};
    ck.meta.config = {{"rootSeed", 1}};
    torch::manual_seed(3);
    ck.tensors["blocks.0.q.weight"] = torch::randn({4, 3});
    ck.tensors["head.bias"] = torch::randn({5});
    ck.tensors["empty"] = torch::zeros({0});
    return ck;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save, load and re-save are byte identical") {
    const auto a = scratch("roundtrip_a.ckpt");
    const auto b = scratch("roundtrip_b.ckpt");
    ckpt::save(a, sample_checkpoint());
    const auto loaded = ckpt::load(a);
    ckpt::save(b, loaded);
    CHECK(slurp(a) == slurp(b));
    CHECK(loaded.meta.step == 42);
    CHECK(loaded.meta.stage == Stage::baseA);
    CHECK(loaded.meta.metricsSnapshot["loss"] == 0.5);
    for (const auto& [name, t] : sample_checkpoint().tensors) {
        CHECK(torch::equal(loaded.tensors.at(name), t));
    }
    CHECK_FALSE(fs::exists(a.string() + ".tmp"));
}

TEST_CASE("header layout: magic, version, little-endian length") {
    const auto p = scratch("layout.ckpt");
    ckpt::save(p, sample_checkpoint());
    const auto bytes = slurp(p);
    REQUIRE(bytes.size() > 20);
    CHECK(bytes.substr(0, 8) == "SKCKPT01");
    CHECK(static_cast<unsigned char>(bytes[8]) == 1);
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i) {
        len |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[12 + i])) << (8 * i);
    }
    CHECK(bytes[20] == '{');
    CHECK(bytes[20 + len - 1] == '}');
    CHECK(bytes.size() == 20 + len + (12 + 5) * sizeof(float));
}

TEST_CASE("stage and config hash mismatches fail loudly") {
    const auto p = scratch("gated.ckpt");
    ckpt::save(p, sample_checkpoint());
    CHECK_NOTHROW(ckpt::load_checked(p, Stage::baseA, "0123456789abcdef"));
    CHECK_THROWS_AS(ckpt::load_checked(p, Stage::sketchB, "0123456789abcdef"), ContractError);
    CHECK_THROWS_AS(ckpt::load_checked(p, Stage::baseA, "fedcba9876543210"), ContractError);
}

TEST_CASE("corrupt files are rejected") {
    const auto p = scratch("corrupt.ckpt");
    {
        std::ofstream out(p, std::ios::binary);
        out << "NOTACKPT";
    }
    CHECK_THROWS_AS(ckpt::load(p), IoError);
    const auto q = scratch("truncated.ckpt");
    ckpt::save(q, sample_checkpoint());
    const auto bytes = slurp(q);
    {
        std::ofstream out(q, std::ios::binary | std::ios::trunc);
        out << bytes.substr(0, bytes.size() - 7);
    }
    CHECK_THROWS_AS(ckpt::load(q), IoError);
    CHECK_THROWS_AS(ckpt::load(scratch("missing.ckpt")), IoError);
}

TEST_CASE("module state round trip, strict and partial") {
    torch::nn::Linear a(3, 2), b(3, 2);
    auto state = ckpt::state_of(*a);
    CHECK(state.size() == 2);
    ckpt::load_state(*b, state);
    CHECK(torch::equal(a->weight, b->weight));
    CHECK(torch::equal(a->bias, b->bias));

    auto partial = state;
    partial.erase("bias");
    CHECK_THROWS_AS(ckpt::load_state(*b, partial), ContractError);
    CHECK_NOTHROW(ckpt::load_state(*b, partial, false));
    auto extra = state;
    extra["ghost"] = torch::zeros({1});
    CHECK_THROWS_AS(ckpt::load_state(*b, extra), ContractError);
    auto wrong = state;
    wrong["weight"] = torch::zeros({3, 3});
    CHECK_THROWS_AS(ckpt::load_state(*b, wrong), ContractError);

    a->bias.set_requires_grad(false);
    const auto trainable = ckpt::trainable_state(*a);
    CHECK(trainable.count("weight") == 1);
    CHECK(trainable.count("bias") == 0);
}

}
