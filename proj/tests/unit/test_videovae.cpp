#include <doctest.h>

#include <torch/torch.h>

#include "oracles.hpp"
#include "sketchcolour/errors.hpp"
#include "sketchcolour/videovae.hpp"

using namespace sketchcolour;

namespace {

VideoTensor random_clip(int64_t t, int64_t h, int64_t w, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return VideoTensor(torch::rand({t, h, w, 3}, gen));
}

}  // namespace

TEST_SUITE("videovae") {

TEST_CASE("latent shape law") {
    VaeConfig cfg;
    CHECK(vae::latent_shape(cfg, 17, 64, 96) == std::array<int64_t, 3>{5, 16, 24});
    CHECK(vae::latent_shape(cfg, 1, 4, 4) == std::array<int64_t, 3>{1, 1, 1});
    CHECK(vae::pixel_shape(cfg, 5, 16, 24) == std::array<int64_t, 3>{17, 64, 96});
    cfg.spatialFactor = 2;
    CHECK(vae::latent_shape(cfg, 9, 8, 8) == std::array<int64_t, 3>{3, 4, 4});
    for (int64_t t : {1, 5, 9, 13, 17, 33}) {
        const auto l = vae::latent_shape(cfg, t, 8, 8);
        CHECK(vae::pixel_shape(cfg, l[0], l[1], l[2]) == std::array<int64_t, 3>{t, 8, 8});
    }
}

TEST_CASE("bad geometry names the offending axis") {
    const VaeConfig cfg;
    auto message = [&](int64_t t, int64_t h, int64_t w) {
        try {
            vae::latent_shape(cfg, t, h, w);
        } catch (const DimensionError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message(16, 64, 96).find("frames") != std::string::npos);
    CHECK(message(17, 62, 96).find("height") != std::string::npos);
    CHECK(message(17, 64, 94).find("width") != std::string::npos);
    CHECK(message(0, 64, 96).find("frames") != std::string::npos);
}

TEST_CASE("encode and decode follow the shape law") {
    torch::manual_seed(0);
    VaeConfig cfg;
    cfg.baseWidth = 8;
    vae::VideoVae model(cfg);
    model->eval();
    const auto z = vae::encode(model, random_clip(17, 64, 96, 1));
    CHECK(z.data().sizes() == torch::IntArrayRef({5, 16, 24, 16}));
    const auto y = vae::decode(model, z);
    CHECK(y.data().sizes() == torch::IntArrayRef({17, 64, 96, 3}));

    const auto single = vae::encode(model, random_clip(1, 4, 4, 2));
    CHECK(single.data().sizes() == torch::IntArrayRef({1, 1, 1, 16}));

    auto micro = fixtures::micro_vae();
    vae::VideoVae small(micro);
    const auto zs = vae::encode(small, random_clip(9, 8, 8, 3));
    CHECK(zs.data().sizes() == torch::IntArrayRef({3, 4, 4, 4}));
    CHECK(vae::decode(small, zs).frames() == 9);

    CHECK_THROWS_AS(vae::encode(small, random_clip(8, 8, 8, 3)), DimensionError);
    CHECK_THROWS_AS(vae::decode(small, LatentTensor(torch::zeros({3, 4, 4, 5}))), ConfigError);
}

TEST_CASE("decoded output stays in range for extreme latents") {
    torch::manual_seed(1);
    vae::VideoVae model(fixtures::micro_vae());
    for (double v : {0.0, 50.0, -50.0}) {
        const auto y = vae::decode(model, LatentTensor(torch::full({2, 3, 3, 4}, v)));
        CHECK(y.data().min().item<float>() >= 0.0f);
        CHECK(y.data().max().item<float>() <= 1.0f);
    }
}

TEST_CASE("posterior mean encoding is deterministic; sampling follows the seed") {
    torch::manual_seed(2);
    vae::VideoVae model(fixtures::micro_vae());
    const auto clip = random_clip(5, 8, 8, 4);
    CHECK(torch::equal(vae::encode(model, clip).data(), vae::encode(model, clip).data()));
    const auto a = vae::encode(model, clip, vae::EncodeMode::sample, 7);
    const auto b = vae::encode(model, clip, vae::EncodeMode::sample, 7);
    const auto c = vae::encode(model, clip, vae::EncodeMode::sample, 8);
    CHECK(torch::equal(a.data(), b.data()));
    CHECK_FALSE(torch::equal(a.data(), c.data()));
}

TEST_CASE("encoder is causal in time") {
    torch::manual_seed(3);
    vae::VideoVae model(fixtures::micro_vae());
    const auto clip = random_clip(9, 8, 8, 5);
    auto altered = clip.data().clone();
    altered.narrow(0, 5, 4).fill_(0.5);
    const auto a = vae::encode(model, clip).data();
    const auto b = vae::encode(model, VideoTensor(altered)).data();
    // Latent frames 0 and 1 only see pixel frames 0..4.
    CHECK(torch::equal(a.narrow(0, 0, 2), b.narrow(0, 0, 2)));
    CHECK_FALSE(torch::equal(a.narrow(0, 2, 1), b.narrow(0, 2, 1)));
}

TEST_CASE("latent scale multiplies encodings") {
    torch::manual_seed(4);
    vae::VideoVae model(fixtures::micro_vae());
    const auto clip = random_clip(5, 8, 8, 6);
    const auto base = vae::encode(model, clip).data();
    model->set_latent_scale(0.5);
    CHECK(model->latent_scale() == 0.5);
    CHECK(torch::allclose(vae::encode(model, clip).data(), base * 0.5));
}

TEST_CASE("pad_reference keeps frame zero and zero-fills the rest") {
    const auto ref = LatentTensor(torch::randn({1, 3, 4, 2}));
    const auto padded = vae::pad_reference(ref, 5);
    CHECK(padded.frames() == 5);
    CHECK(torch::equal(padded.data()[0], ref.data()[0]));
    CHECK(torch::equal(padded.data().narrow(0, 1, 4), torch::zeros({4, 3, 4, 2})));
    CHECK(torch::equal(vae::pad_reference(ref, 1).data(), ref.data()));
    CHECK_THROWS_AS(vae::pad_reference(LatentTensor(torch::zeros({2, 3, 4, 2})), 5), ContractError);
}

TEST_CASE("loss terms") {
    const auto target = torch::zeros({1, 3, 5, 4, 4});
    const auto recon = torch::full({1, 3, 5, 4, 4}, 0.25);
    vae::Posterior unit{torch::zeros({1, 4, 2, 2, 2}), torch::zeros({1, 4, 2, 2, 2})};
    auto l = vae::vae_loss_terms(target, recon, unit, 0.5);
    CHECK(l.reconstruction.item<double>() == doctest::Approx(0.0625));
    CHECK(l.kl.item<double>() == doctest::Approx(0.0));
    CHECK(l.total.item<double>() == doctest::Approx(0.0625));

    // KL of N(1, e^0) to N(0,1) is 1/2 per element.
    vae::Posterior shifted{torch::ones({1, 4, 2, 2, 2}), torch::zeros({1, 4, 2, 2, 2})};
    l = vae::vae_loss_terms(target, recon, shifted, 0.5);
    CHECK(l.kl.item<double>() == doctest::Approx(0.5));
    CHECK(l.total.item<double>() == doctest::Approx(0.0625 + 0.25));
    l = vae::vae_loss_terms(target, recon, shifted, 0.0);
    CHECK(l.total.item<double>() == doctest::Approx(0.0625));
}

TEST_CASE("PCA recovers a planted direction") {
    // Positions vary only along channel direction (1, 1, 0, 0) / sqrt 2.
    auto s = torch::linspace(-1.0, 1.0, 2 * 3 * 4, torch::kFloat64).reshape({2, 3, 4, 1});
    auto dir = torch::tensor({1.0, 1.0, 0.0, 0.0}, torch::kFloat64) / std::sqrt(2.0);
    auto data = (s * dir + torch::tensor({0.0, 0.0, 0.3, -0.2}, torch::kFloat64)).to(torch::kFloat32);
    const auto p = vae::pca_channel_projection(LatentTensor(data), 1);
    CHECK(p.explainedVarianceRatio[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(torch::allclose(p.basis.select(1, 0), dir, 1e-5, 1e-6));
    CHECK(p.images.sizes() == torch::IntArrayRef({2, 3, 4, 1}));
    CHECK(p.images.min().item<float>() == 0.0f);
    CHECK(p.images.max().item<float>() == 1.0f);
    // Scores are monotone in the planted coordinate.
    CHECK(torch::all(p.scores.select(1, 0).diff() > 0).item<bool>());
}

TEST_CASE("PCA ratios are ordered and sum to at most one") {
    torch::manual_seed(5);
    const auto p = vae::pca_channel_projection(LatentTensor(torch::randn({3, 5, 5, 6})), 3);
    CHECK(p.explainedVarianceRatio.size() == 3);
    CHECK(p.explainedVarianceRatio[0] >= p.explainedVarianceRatio[1]);
    CHECK(p.explainedVarianceRatio[1] >= p.explainedVarianceRatio[2]);
    CHECK(p.explainedVarianceRatio[0] + p.explainedVarianceRatio[1] + p.explainedVarianceRatio[2] <= 1.0 + 1e-12);
    const auto gram = p.basis.t().mm(p.basis);
    CHECK(torch::allclose(gram, torch::eye(3, torch::kFloat64), 1e-9, 1e-9));
    CHECK_THROWS_AS(vae::pca_channel_projection(LatentTensor(torch::ones({2, 2, 2, 4})), 1), DegenerateInputError);
    CHECK_THROWS_AS(vae::pca_channel_projection(LatentTensor(torch::randn({2, 2, 2, 4})), 5), ContractError);
}

TEST_CASE("analytic gradients match finite differences") {
    torch::manual_seed(6);
    vae::VideoVae model(fixtures::micro_vae());
    model->to(torch::kFloat64);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(11);
    const auto batch = torch::rand({1, 3, 5, 4, 4}, gen, torch::kFloat64);
    std::vector<torch::Tensor> params;
    for (const auto& p : model->parameters()) {
        params.push_back(p);
    }
    const double worst =
        oracle::worst_gradient_error(params, [&] { return vae::vae_loss(model, batch, 3).total; }, 20, 99);
    CHECK(worst <= 1e-3);
}

}
