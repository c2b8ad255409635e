#include <doctest.h>

#include "x2ct/errors.hpp"
#include "x2ct/unet3d.hpp"

using namespace x2ct;

namespace {

ConditionSet random_conditions(const DenoiserConfig& cfg, Shape3 input, std::int64_t batch, std::uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    ConditionSet cs;
    for (auto s : feature_shapes(cfg, input)) cs.h.push_back(torch::randn({batch, cfg.cond_channels, s.d, s.h, s.w}, gen));
    return cs;
}

// Brute-force windowed attention: token pairs interact when they share a
// window of the rolled map and are not separated by the wrap-around seam.
torch::Tensor attention_oracle(WindowAttention3dImpl& m, const torch::Tensor& x) {
    const auto D = x.size(1), H = x.size(2), W = x.size(3), C = x.size(4);
    const auto ws = m.window(), s = m.shift(), heads = m.heads(), dh = C / heads;
    auto q_k_v = m.qkv(x.reshape({-1, C})).to(torch::kFloat64);  // tokens in original order
    auto qa = q_k_v.accessor<double, 2>();
    auto out = torch::zeros({D * H * W, C}, torch::kFloat64);
    auto oa = out.accessor<double, 2>();
    auto orig = [&](std::int64_t r, std::int64_t n) { return (r + s) % n; };
    for (std::int64_t rd = 0; rd < D; ++rd)
        for (std::int64_t rh = 0; rh < H; ++rh)
            for (std::int64_t rw = 0; rw < W; ++rw) {
                const auto i = (orig(rd, D) * H + orig(rh, H)) * W + orig(rw, W);
                std::vector<std::int64_t> partners;
                for (std::int64_t pd = rd / ws * ws; pd < rd / ws * ws + ws; ++pd)
                    for (std::int64_t ph = rh / ws * ws; ph < rh / ws * ws + ws; ++ph)
                        for (std::int64_t pw = rw / ws * ws; pw < rw / ws * ws + ws; ++pw) {
                            const bool contiguous = std::abs(orig(pd, D) - orig(rd, D)) == std::abs(pd - rd) &&
                                                    std::abs(orig(ph, H) - orig(rh, H)) == std::abs(ph - rh) &&
                                                    std::abs(orig(pw, W) - orig(rw, W)) == std::abs(pw - rw);
                            if (contiguous) partners.push_back((orig(pd, D) * H + orig(ph, H)) * W + orig(pw, W));
                        }
                for (std::int64_t hd = 0; hd < heads; ++hd) {
                    std::vector<double> logit;
                    double mx = -1e300;
                    for (auto j : partners) {
                        double acc = 0.0;
                        for (std::int64_t e = 0; e < dh; ++e) acc += qa[i][hd * dh + e] * qa[j][C + hd * dh + e];
                        logit.push_back(acc / std::sqrt(static_cast<double>(dh)));
                        mx = std::max(mx, logit.back());
                    }
                    double z = 0.0;
                    for (auto& l : logit) z += (l = std::exp(l - mx));
                    for (std::size_t p = 0; p < partners.size(); ++p)
                        for (std::int64_t e = 0; e < dh; ++e)
                            oa[i][hd * dh + e] += logit[p] / z * qa[partners[p]][2 * C + hd * dh + e];
                }
            }
    return m.proj(out.to(x.dtype())).reshape({1, D, H, W, C});
}

}  // namespace

TEST_SUITE("unet3d") {
TEST_CASE("stage shapes follow the stride schedule") {
    DenoiserConfig cfg;
    auto s = feature_shapes(cfg, {32, 32, 32});
    REQUIRE(s.size() == 3);
    CHECK(s[0] == Shape3{32, 32, 32});
    CHECK(s[1] == Shape3{16, 16, 16});
    CHECK(s[2] == Shape3{8, 8, 8});
}

TEST_CASE("shifted window attention matches the brute-force oracle") {
    torch::manual_seed(1);
    for (std::int64_t shift : {0, 1}) {
        WindowAttention3d m(4, 2, 2, shift);
        auto gen = at::make_generator<at::CPUGeneratorImpl>(2 + shift);
        auto x = torch::randn({1, 4, 4, 4, 4}, gen);
        auto got = m->attend(x);
        auto want = attention_oracle(*m, x);
        CHECK((got - want).abs().max().item<double>() < 1e-5);
    }
}

TEST_CASE("a single full window is global attention") {
    torch::manual_seed(3);
    WindowAttention3d m(4, 1, 4, 0);
    auto x = torch::randn({1, 4, 4, 4, 4});
    auto tokens = x.reshape({64, 4});
    auto qkv = m->qkv(tokens);
    auto q = qkv.narrow(1, 0, 4), k = qkv.narrow(1, 4, 4), v = qkv.narrow(1, 8, 4);
    auto ref = m->proj(torch::softmax(q.matmul(k.t()) / 2.0, -1).matmul(v)).reshape({1, 4, 4, 4, 4});
    CHECK(torch::allclose(m->attend(x), ref, 1e-5, 1e-5));
}

TEST_CASE("constant features give a constant attention output") {
    torch::manual_seed(4);
    WindowAttention3d m(4, 2, 2, 1);
    auto x = torch::ones({1, 4, 4, 4, 4}) * torch::tensor({0.3f, -1.0f, 2.0f, 0.5f});
    auto y = m->attend(x);
    auto first = y.reshape({-1, 4})[0];
    CHECK(torch::allclose(y.reshape({-1, 4}), first.expand({64, 4}), 1e-6, 1e-6));
}

TEST_CASE("denoiser preserves shape and depends on its conditions") {
    torch::manual_seed(5);
    DenoiserConfig cfg;
    Denoiser net(cfg);
    net->eval();
    torch::NoGradGuard ng;
    for (std::int64_t n : {16, 32, 64}) {
        const Shape3 s{n, n, n};
        auto y = torch::randn({1, 1, n, n, n});
        auto t = torch::tensor({7}, torch::kInt64);
        auto cond = random_conditions(cfg, s, 1, 6);
        auto out = net->forward(y, t, cond);
        CHECK(out.sizes() == y.sizes());
        if (n == 32) {
            CHECK(torch::equal(out, net->forward(y, t, cond)));
            ConditionSet zero;
            for (auto& h : cond.h) zero.h.push_back(torch::zeros_like(h));
            CHECK_FALSE(torch::allclose(out, net->forward(y, t, zero)));
        }
    }
}

TEST_CASE("parameter counts") {
    torch::manual_seed(6);
    DenoiserConfig cfg;
    Denoiser a(cfg), b(cfg);
    CHECK(a->count_parameters() == b->count_parameters());
    auto wide = cfg;
    wide.base_channels *= 2;
    CHECK(Denoiser(wide)->count_parameters() > a->count_parameters());
}

TEST_CASE("config validation") {
    DenoiserConfig cfg;
    CHECK_THROWS_AS(cfg.validate_input({20, 20, 20}), InvalidArgument);
    cfg.channel_multipliers = {1, 2};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}
}
