#include <doctest.h>

#include <cmath>

#include <torch/torch.h>

#include "oracles.hpp"
#include "sketchcolour/diffusion.hpp"
#include "sketchcolour/errors.hpp"
#include "sketchcolour/stats.hpp"

using namespace sketchcolour;
using diffusion::NoiseSchedule;

namespace {

// Knows the clean latent, so it can answer with the exact regression target.
class KnowsTarget : public dit::Denoiser {
public:
    KnowsTarget(torch::Tensor x0, const NoiseSchedule& schedule) : x0_(std::move(x0)), schedule_(schedule) {}
    torch::Tensor predict(const torch::Tensor& noisy, const torch::Tensor&, const torch::Tensor&,
                          const torch::Tensor& timesteps) override {
        std::vector<torch::Tensor> out;
        for (int64_t b = 0; b < noisy.size(0); ++b) {
            const double ab = schedule_.alpha_bar(static_cast<int64_t>(timesteps[b].item<double>()));
            const auto eps = (noisy[b] - std::sqrt(ab) * x0_[b]) / std::sqrt(1.0 - ab);
            out.push_back(diffusion::target_for(x0_[b], eps, ab, schedule_.prediction()));
        }
        return torch::stack(out);
    }
    bool accepts_sketch() const override { return true; }

private:
    torch::Tensor x0_;
    const NoiseSchedule& schedule_;
};

class Silent : public dit::Denoiser {
public:
    torch::Tensor predict(const torch::Tensor& noisy, const torch::Tensor&, const torch::Tensor&,
                          const torch::Tensor&) override {
        return torch::zeros_like(noisy);
    }
    bool accepts_sketch() const override { return true; }
};

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("scalar noising and v target") {
    const auto x0 = torch::tensor({2.0}, torch::kFloat64);
    const auto eps = torch::tensor({4.0}, torch::kFloat64);
    CHECK(diffusion::add_noise(x0, eps, 0.25).item<double>() == doctest::Approx(1.0 + std::sqrt(0.75) * 4.0));
    CHECK(diffusion::add_noise(x0, eps, 0.25).item<double>() == doctest::Approx(4.4641).epsilon(1e-4));
    CHECK(diffusion::target_for(x0, eps, 0.25, PredictionType::v).item<double>() ==
          doctest::Approx(0.2679).epsilon(1e-3));
    CHECK(diffusion::add_noise(x0, eps, 1.0).item<double>() == 2.0);
    CHECK(diffusion::add_noise(x0, eps, 0.0).item<double>() == 4.0);
    CHECK(diffusion::target_for(x0, eps, 1.0, PredictionType::v).item<double>() == 4.0);
    CHECK(diffusion::target_for(x0, eps, 0.0, PredictionType::v).item<double>() == -2.0);
    CHECK(diffusion::target_for(x0, eps, 0.3, PredictionType::epsilon).item<double>() == 4.0);
    CHECK_THROWS_AS(diffusion::add_noise(x0, torch::zeros({2}, torch::kFloat64), 0.5), DimensionError);
}

TEST_CASE("cosine schedule matches its closed form and decreases strictly") {
    const NoiseSchedule s(ScheduleConfig{});
    REQUIRE(s.steps() == 1000);
    for (int64_t t = 0; t < 999; t += 37) {
        CHECK(s.alpha_bar(t) == doctest::Approx(oracle::cosine_alpha_bar(t, 1000)).epsilon(1e-9));
    }
    for (int64_t t = 1; t < s.steps(); ++t) {
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    CHECK(s.alpha_bar(0) < 1.0);
    CHECK(s.alpha_bar(0) > 0.999);
    CHECK(s.alpha_bar(999) < 1e-3);
    CHECK_THROWS_AS(s.alpha_bar(1000), ContractError);
    CHECK_THROWS_AS(s.alpha_bar(-1), ContractError);
}

TEST_CASE("linear schedule") {
    ScheduleConfig c;
    c.kind = ScheduleKind::linear;
    c.steps = 10;
    const NoiseSchedule s(c);
    double acc = 1.0;
    for (int64_t t = 0; t < 10; ++t) {
        acc *= 1.0 - (1e-4 + (2e-2 - 1e-4) * static_cast<double>(t) / 9.0);
        CHECK(s.alpha_bar(t) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("noising and v target invert each other") {
    const NoiseSchedule s(ScheduleConfig{});
    torch::manual_seed(1);
    const auto x0 = torch::randn({64}, torch::kFloat64);
    const auto eps = torch::randn({64}, torch::kFloat64);
    for (int64_t t : {0, 10, 250, 500, 999}) {
        const double ab = s.alpha_bar(t);
        CHECK(std::abs(std::sqrt(ab) * std::sqrt(ab) + std::sqrt(1 - ab) * std::sqrt(1 - ab) - 1.0) <= 1e-12);
        const auto xt = diffusion::add_noise(x0, eps, ab);
        const auto v = diffusion::target_for(x0, eps, ab, PredictionType::v);
        CHECK(torch::allclose(xt * std::sqrt(ab) - v * std::sqrt(1 - ab), x0, 1e-6, 1e-6));
        const auto est = diffusion::estimates_from_prediction(xt, v, ab, PredictionType::v);
        CHECK(torch::allclose(est.x0, x0, 1e-6, 1e-6));
        CHECK(torch::allclose(est.eps, eps, 1e-6, 1e-6));
        const auto e = diffusion::estimates_from_prediction(xt, eps, ab, PredictionType::epsilon);
        CHECK(torch::allclose(e.x0, x0, 1e-6, 1e-6));
    }
}

TEST_CASE("trailing DDIM timesteps") {
    CHECK(diffusion::ddim_timesteps(1000, 4) == std::vector<int64_t>{999, 749, 499, 249});
    CHECK(diffusion::ddim_timesteps(10, 10) == std::vector<int64_t>{9, 8, 7, 6, 5, 4, 3, 2, 1, 0});
    CHECK(diffusion::ddim_timesteps(1000, 1) == std::vector<int64_t>{999});
    const auto ts = diffusion::ddim_timesteps(1000, 50);
    CHECK(ts.size() == 50);
    CHECK(ts.front() == 999);
    for (size_t i = 1; i < ts.size(); ++i) {
        CHECK(ts[i] < ts[i - 1]);
    }
    CHECK_THROWS_AS(diffusion::ddim_timesteps(10, 11), ConfigError);
    CHECK_THROWS_AS(diffusion::ddim_timesteps(10, 0), ConfigError);
}

TEST_CASE("DDIM with the exact Gaussian denoiser lands on the data distribution") {
    const NoiseSchedule s(ScheduleConfig{});
    const double mu = 1.5;
    const double sigma = 0.5;
    auto exact = [&](const torch::Tensor& xt, int64_t t) {
        const double ab = s.alpha_bar(t);
        const double marginal = ab * sigma * sigma + 1.0 - ab;
        const auto x0 = mu + std::sqrt(ab) * sigma * sigma / marginal * (xt - std::sqrt(ab) * mu);
        return (std::sqrt(ab) * xt - x0) / std::sqrt(1.0 - ab);
    };
    auto gen = at::make_generator<at::CPUGeneratorImpl>(2024);
    const auto init = torch::randn({2000}, gen, torch::kFloat64);
    SamplerConfig sampler;
    const auto out = diffusion::ddim_sample(exact, init, s, sampler);
    std::vector<double> xs(out.data_ptr<double>(), out.data_ptr<double>() + out.numel());
    const double d = stats::ks_statistic(xs, [&](double v) { return stats::normal_cdf(v, mu, sigma); });
    CHECK(stats::ks_p_value(d, xs.size()) > 0.01);
    // and clearly not the prior
    const double prior = stats::ks_statistic(xs, [](double v) { return stats::normal_cdf(v); });
    CHECK(stats::ks_p_value(prior, xs.size()) < 1e-6);
}

TEST_CASE("loss is zero for the exact model, mean square for a silent one, seeded") {
    ScheduleConfig c;
    c.steps = 100;
    const NoiseSchedule s(c);
    torch::manual_seed(3);
    const auto x0 = torch::randn({2, 4, 3, 4, 4});
    const auto ref = torch::randn({2, 4, 3, 4, 4});
    KnowsTarget oracleModel(x0, s);
    CHECK(diffusion::latent_loss(oracleModel, x0, ref, ref, s, 5).item<double>() <= 1e-10);

    Silent silent;
    // Rebuild the target the loss sees from the same seed.
    auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
    const auto ts = torch::randint(0, s.steps(), {2}, gen, torch::kLong);
    const auto eps = torch::randn(x0.sizes(), gen, x0.options());
    double sq = 0.0;
    for (int64_t b = 0; b < 2; ++b) {
        const double ab = s.alpha_bar(ts[b].item<int64_t>());
        sq += diffusion::target_for(x0[b], eps[b], ab, PredictionType::v).pow(2).sum().item<double>();
    }
    const double expected = sq / static_cast<double>(x0.numel());
    const double got = diffusion::latent_loss(silent, x0, ref, ref, s, 5).item<double>();
    CHECK(got == doctest::Approx(expected).epsilon(1e-6));
    CHECK(got > 0.0);

    const auto c2 = fixtures::micro_dit();
    dit::DiffusionTransformer model(c2, 3);
    fixtures::randomize(*model, 6);
    const auto z = torch::randn({1, 4, 3, 8, 8});
    const double a = diffusion::latent_loss(*model, z, z, z, s, 9).item<double>();
    const double b = diffusion::latent_loss(*model, z, z, z, s, 9).item<double>();
    CHECK(a == b);
    CHECK(a != diffusion::latent_loss(*model, z, z, z, s, 10).item<double>());
}

TEST_CASE("sampling contract") {
    torch::manual_seed(7);
    vae::VideoVae vae(fixtures::micro_vae());
    const auto c = fixtures::micro_dit();
    dit::DiffusionTransformer model(c, 3);
    fixtures::randomize(*model, 8, 0.05);
    ScheduleConfig sc;
    sc.steps = 50;
    const NoiseSchedule s(sc);
    SamplerConfig sampler;
    sampler.numInferenceSteps = 5;
    sampler.seed = 3;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
    const VideoTensor ref(torch::rand({1, 16, 16, 3}, gen));
    const VideoTensor sketches((torch::rand({9, 16, 16, 3}, gen) > 0.5).to(torch::kFloat32));
    const auto a = diffusion::sample(*model, vae, ref, sketches, s, sampler);
    CHECK(a.data().sizes() == sketches.data().sizes());
    CHECK(torch::equal(diffusion::sample(*model, vae, ref, sketches, s, sampler).data(), a.data()));
    sampler.seed = 4;
    CHECK_FALSE(torch::equal(diffusion::sample(*model, vae, ref, sketches, s, sampler).data(), a.data()));

    dit::DiffusionTransformer base(c, 2);
    CHECK_THROWS_AS(diffusion::sample(*base, vae, ref, sketches, s, sampler), ContractError);
    CHECK_THROWS_AS(diffusion::sample_without_sketch(*model, vae, ref, 9, s, sampler), ContractError);
    CHECK(diffusion::sample_without_sketch(*base, vae, ref, 9, s, sampler).frames() == 9);
    CHECK_THROWS_AS(diffusion::sample(*model, vae, VideoTensor(torch::rand({1, 8, 16, 3})), sketches, s, sampler),
                    DimensionError);
}

}
