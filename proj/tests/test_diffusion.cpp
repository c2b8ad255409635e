#include <doctest.h>

#include <algorithm>

#include "oracles.hpp"
#include "x2ct/config.hpp"
#include "x2ct/diffusion.hpp"
#include "x2ct/errors.hpp"
#include "x2ct/icm_reg.hpp"

using namespace x2ct;

namespace {

torch::Tensor randn64(torch::IntArrayRef shape, std::uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::randn(shape, gen, torch::kFloat64);
}

// Small 16^3 experiment used by the training smoke tests.
ExperimentConfig small_config(std::uint64_t seed) {
    ExperimentConfig c;
    c.data.size = 16;
    c.model.base_channels = 8;
    c.model.window_size = 4;
    c.model.dropout = 0.0;
    c.icm.stem_channels = 8;
    c.icm.plane_channels = 8;
    c.train.batch = 2;
    c.train.seed = seed;
    c.train.lr = 1e-3;
    return c;
}

TrainingSet single_phantom(const ExperimentConfig& c, int copies) {
    auto vol = clip_and_normalize(generate_phantom(phantom_spec(c, 0)));
    auto pair = make_biplanar_pair(vol, drr_geometry(c));
    std::vector<torch::Tensor> f, s, v;
    for (int i = 0; i < copies; ++i) {
        f.push_back(pair.front.unsqueeze(0));
        s.push_back(pair.side.unsqueeze(0));
        v.push_back(vol.data.unsqueeze(0));
    }
    return {torch::stack(f), torch::stack(s), torch::stack(v)};
}

}  // namespace

TEST_SUITE("diffusion") {
TEST_CASE("schedule construction") {
    auto one = schedule_from_betas({0.3});
    CHECK(one.alpha_bar_at(1) == doctest::Approx(0.7).epsilon(1e-15));
    auto s = make_schedule(1000);
    CHECK(s.beta_at(1) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.beta_at(1000) == doctest::Approx(0.02).epsilon(1e-12));
    for (int T : {1, 10, 100, 1000}) {
        auto sc = make_schedule(T);
        for (int t = 2; t <= T; ++t) CHECK(sc.alpha_bar_at(t) < sc.alpha_bar_at(t - 1));
        for (int t = 1; t <= T; ++t) CHECK(sc.beta_at(t) < 1.0);
    }
    auto p = make_schedule(100, ScheduleKind::linear, VarianceKind::posterior);
    CHECK(p.sigma_at(5) * p.sigma_at(5) ==
          doctest::Approx(p.beta_at(5) * (1 - p.alpha_bar_at(4)) / (1 - p.alpha_bar_at(5))).epsilon(1e-12));
    CHECK_THROWS_AS(s.check_t(0), InvalidArgument);
    CHECK_THROWS_AS(s.check_t(1001), InvalidArgument);
}

TEST_CASE("forward process edge cases") {
    auto y0 = randn64({2, 1, 4, 4, 4}, 1), eps = randn64({2, 1, 4, 4, 4}, 2);
    auto zero = schedule_from_betas(std::vector<double>(5, 0.0));
    for (int t = 1; t <= 5; ++t) CHECK(torch::equal(q_sample(zero, y0, t, eps), y0));
    auto s = make_schedule(100);
    CHECK(torch::allclose(q_sample(s, y0, 40, torch::zeros_like(y0)), std::sqrt(s.alpha_bar_at(40)) * y0));
    auto t = torch::tensor({3, 70}, torch::kInt64);
    auto batched = q_sample(s, y0, t, eps);
    CHECK(torch::allclose(batched[1], q_sample(s, y0[1], 70, eps[1])));
}

TEST_CASE("forward moments over many draws") {
    auto s = make_schedule(100);
    const int t = 30, n = 10000;
    auto y0 = torch::tensor({-0.8, 0.1, 0.6}, torch::kFloat64);
    auto eps = randn64({n, 3}, 3);
    auto y = q_sample(s, y0.expand({n, 3}), t, eps);
    const double ab = s.alpha_bar_at(t);
    auto mean = y.mean(0), var = y.var(0);
    auto se_mean = std::sqrt((1 - ab) / n);
    auto se_var = (1 - ab) * std::sqrt(2.0 / (n - 1));
    CHECK(((mean - std::sqrt(ab) * y0).abs() / se_mean).max().item<double>() < 5.0);
    CHECK(((var - (1 - ab)).abs() / se_var).max().item<double>() < 5.0);
}

TEST_CASE("predict_y0 inverts q_sample") {
    auto s = make_schedule(100);
    for (int t : {1, 17, 100}) {
        auto y0 = randn64({1, 1, 4, 4, 4}, 10 + t), eps = randn64({1, 1, 4, 4, 4}, 20 + t);
        auto back = predict_y0(s, q_sample(s, y0, t, eps), t, eps);
        CHECK((back - y0).abs().max().item<double>() <= 1e-5);
        auto exact = predict_y0(s, q_sample(s, y0, t, eps), t, eps, Y0Mode::paper_exact);
        CHECK_FALSE(torch::allclose(exact, back));
    }
    auto unit = schedule_from_betas({0.0, 0.1});
    auto y = randn64({3}, 4), e = randn64({3}, 5);
    CHECK(torch::equal(predict_y0(unit, y, 1, e), y));
    CHECK(torch::equal(predict_y0(unit, y, 1, e, Y0Mode::paper_exact), y));
}

TEST_CASE("reverse step conventions") {
    auto s = make_schedule(100);
    auto y = randn64({4}, 6), e = randn64({4}, 7), noise = randn64({4}, 8);
    CHECK(torch::equal(p_sample_step(s, y, 1, e, noise), p_sample_step(s, y, 1, e, torch::zeros_like(noise))));
    auto zero = schedule_from_betas(std::vector<double>(3, 0.0));
    CHECK(torch::equal(p_sample_step(zero, y, 2, e, torch::zeros_like(y)), y));
    auto single = schedule_from_betas({0.02});
    auto y0 = randn64({4}, 9);
    auto y1 = q_sample(single, y0, 1, e);
    CHECK((p_sample_step(single, y1, 1, e, noise) - y0).abs().max().item<double>() <= 1e-5);
}

TEST_CASE("clipped reverse step") {
    auto s = make_schedule(100);
    auto clipped = s;
    clipped.clip_y0 = true;
    auto y0 = torch::rand({64}, at::make_generator<at::CPUGeneratorImpl>(3), torch::kFloat64) * 1.8 - 0.9;
    auto e = randn64({64}, 4), noise = randn64({64}, 5);
    for (int t : {2, 40, 100}) {
        auto yt = q_sample(s, y0, t, e);
        CHECK((p_sample_step(clipped, yt, t, e, noise) - p_sample_step(s, yt, t, e, noise)).abs().max().item<double>() <=
              1e-12);
    }

    auto two = schedule_from_betas({0.1, 0.3});
    two.clip_y0 = true;
    auto y = randn64({32}, 6) * 3.0, eh = randn64({32}, 7);
    auto got = p_sample_step(two, y, 2, eh, torch::zeros_like(y));
    const double ab2 = 0.9 * 0.7;
    for (int i = 0; i < 32; ++i) {
        const double yi = y[i].item<double>();
        const double y0c = std::clamp((yi - std::sqrt(1 - ab2) * eh[i].item<double>()) / std::sqrt(ab2), -1.0, 1.0);
        const double want = std::sqrt(0.9) * 0.3 / (1 - ab2) * y0c + std::sqrt(0.7) * 0.1 / (1 - ab2) * yi;
        CHECK(got[i].item<double>() == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("loss functions") {
    auto e = randn64({2, 1, 4, 4, 4}, 11);
    CHECK(loss_simple(e, e).item<double>() == 0.0);
    CHECK(loss_simple(torch::zeros({8}), torch::full({8}, 0.5)).item<double>() == doctest::Approx(0.5));
    auto e2 = randn64({2, 1, 4, 4, 4}, 12);
    auto ea = e.flatten(), eb = e2.flatten();
    double acc = 0.0;
    for (std::int64_t i = 0; i < ea.numel(); ++i) acc += std::abs(ea[i].item<double>() - eb[i].item<double>());
    CHECK(loss_simple(e, e2).item<double>() == doctest::Approx(acc / ea.numel()).epsilon(1e-12));

    auto y0 = randn64({1, 1, 4, 5, 6}, 13);
    CHECK(loss_proj(y0, y0).item<double>() == 0.0);
    CHECK(loss_proj(y0, y0 + 0.25).item<double>() == doctest::Approx(0.25).epsilon(1e-12));
    auto y1 = randn64({1, 1, 4, 5, 6}, 14);
    auto pa = oracle::mean_projections(y0[0][0]), pb = oracle::mean_projections(y1[0][0]);
    double ref = 0.0;
    for (int k = 0; k < 3; ++k) ref += (pa[k] - pb[k]).abs().mean().item<double>() / 3.0;
    CHECK(loss_proj(y0, y1).item<double>() == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("lambda defaults to 1/T and the report adds up") {
    auto c = small_config(3);
    for (int T : {1, 100, 1000}) {
        c.schedule.T = T;
        torch::manual_seed(1);
        DiffusionTrainer tr(Conditioner(conditioner_config(c)), Denoiser(denoiser_config(c)), schedule_from_config(c),
                            trainer_options(c));
        CHECK(tr.lambda() == 1.0 / T);
    }
    c.schedule.T = 100;
    auto data = single_phantom(c, 2);
    torch::manual_seed(2);
    DiffusionTrainer tr(Conditioner(conditioner_config(c)), Denoiser(denoiser_config(c)), schedule_from_config(c),
                        trainer_options(c));
    auto r = tr.train_step(data);
    CHECK(r.lambda == 0.01);
    CHECK(r.total == r.simple + r.lambda * r.proj);
    c.ablation.no_proj_loss = true;
    DiffusionTrainer off(Conditioner(conditioner_config(c)), Denoiser(denoiser_config(c)), schedule_from_config(c),
                         trainer_options(c));
    CHECK(off.lambda() == 0.0);
}

TEST_CASE("identically seeded steps give identical reports") {
    auto c = small_config(4);
    auto data = single_phantom(c, 2);
    auto run = [&] {
        torch::manual_seed(7);
        DiffusionTrainer tr(Conditioner(conditioner_config(c)), Denoiser(denoiser_config(c)), schedule_from_config(c),
                            trainer_options(c));
        std::vector<double> out;
        for (int i = 0; i < 3; ++i) out.push_back(tr.train_step(data).total);
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("sampling is seeded") {
    auto c = small_config(5);
    c.schedule.T = 5;
    torch::manual_seed(3);
    Conditioner cond(conditioner_config(c));
    Denoiser den(denoiser_config(c));
    auto data = single_phantom(c, 1);
    auto sched = schedule_from_config(c);
    auto a = sample(cond, den, data.fronts, data.sides, sched, 1);
    auto b = sample(cond, den, data.fronts, data.sides, sched, 1);
    auto d = sample(cond, den, data.fronts, data.sides, sched, 2);
    CHECK(torch::equal(a, b));
    CHECK_FALSE(torch::equal(a, d));
    CHECK(a.sizes() == torch::IntArrayRef{1, 1, 16, 16, 16});
    CHECK(a.abs().max().item<double>() <= 1.0);
}

TEST_CASE("training loss falls on a repeated phantom") {
    std::vector<double> ratios;
    for (std::uint64_t seed : {1, 2, 3}) {
        auto c = small_config(seed);
        auto data = single_phantom(c, 2);
        torch::manual_seed(seed);
        DiffusionTrainer tr(Conditioner(conditioner_config(c)), Denoiser(denoiser_config(c)), schedule_from_config(c),
                            trainer_options(c));
        double first = 0.0, last = 0.0;
        for (int i = 0; i < 200; ++i) {
            const double l = tr.train_step(data).total;
            if (i < 10) first += l / 10;
            if (i >= 190) last += l / 10;
        }
        ratios.push_back(last / first);
    }
    std::sort(ratios.begin(), ratios.end());
    MESSAGE("median final/initial loss ratio " << ratios[1]);
    CHECK(ratios[1] < 0.5);
}

TEST_CASE("regressor output shape and zero-initialized head") {
    auto c = small_config(6);
    torch::manual_seed(4);
    IcmRegressor reg(conditioner_config(c), 8);
    auto data = single_phantom(c, 2);
    reg->eval();
    auto out = reg->forward(data.fronts, data.sides);
    CHECK(out.sizes() == data.volumes.sizes());
    {
        torch::NoGradGuard ng;
        reg->decoder->head->weight.zero_();
        reg->decoder->head->bias.fill_(0.125);
    }
    auto flat = reg->forward(data.fronts, data.sides);
    CHECK(torch::all(flat == 0.125).item<bool>());
}
}
