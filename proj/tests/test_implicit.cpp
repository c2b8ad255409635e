#include <doctest.h>

#include "oracles.hpp"
#include "x2ct/implicit_decoder.hpp"

using namespace x2ct;

namespace {

torch::Tensor randn64(torch::IntArrayRef shape, std::uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::randn(shape, gen, torch::kFloat64);
}

}  // namespace

TEST_SUITE("implicit") {
TEST_CASE("coordinate grid") {
    auto g1 = make_coordinate_grid({1, 1, 1});
    CHECK(g1.sizes() == torch::IntArrayRef{1, 3});
    CHECK(g1.abs().max().item<double>() == 0.0);
    auto g2 = make_coordinate_grid({2, 2, 2});
    CHECK(g2.size(0) == 8);
    CHECK(torch::all(g2.abs() == 0.5).item<bool>());
    auto g4 = make_coordinate_grid({4, 4, 4});
    CHECK(torch::allclose(g4[0].to(torch::kFloat64), torch::full({3}, -0.75, torch::kFloat64)));
    // Columns are (u, v, w); v runs fastest.
    auto g = make_coordinate_grid({2, 3, 4});
    CHECK(g[1][2].item<double>() == doctest::Approx(-0.5));   // w of k=1 still first slice
    CHECK(g[1][1].item<double>() == doctest::Approx(-0.25));  // v index 1 of 4
}

TEST_CASE("grid nodes return stored features and cell midpoints average corners") {
    auto plane = randn64({1, 2, 4, 4}, 1);
    // Node (r, c) sits at (2r + 1) / 4 - 1.
    auto pts = torch::tensor({{-0.75, -0.25}, {0.25, 0.75}}, torch::kFloat64);
    auto s = sample_plane(plane, pts);
    CHECK(s[0][0][1].item<double>() == plane[0][1][0][1].item<double>());
    CHECK(s[0][1][0].item<double>() == plane[0][0][2][3].item<double>());
    auto mid = sample_plane(plane, torch::tensor({{-0.5, -0.5}}, torch::kFloat64));
    auto expect = plane[0][0].slice(0, 0, 2).slice(1, 0, 2).mean().item<double>();
    CHECK(mid[0][0][0].item<double>() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("bilinear sampling matches the scalar oracle on a 5x7 plane") {
    auto plane = randn64({1, 3, 5, 7}, 2);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    auto pts = torch::rand({200, 2}, gen, torch::kFloat64) * 2.4 - 1.2;
    auto s = sample_plane(plane, pts);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k)
        for (int c = 0; c < 3; ++c)
            worst = std::max(worst, std::abs(s[0][k][c].item<double>() -
                                             oracle::bilinear(plane[0], c, pts[k][0].item<double>(),
                                                              pts[k][1].item<double>())));
    CHECK(worst <= 1e-6);
}

TEST_CASE("tri-plane summation identities") {
    const Shape3 shp{3, 4, 4};
    auto grid = make_coordinate_grid(shp).to(torch::kFloat64);
    PlaneTriple p{torch::zeros({1, 2, 4, 4}, torch::kFloat64), torch::full({1, 2, 4, 3}, 2.5, torch::kFloat64),
                  torch::zeros({1, 2, 4, 3}, torch::kFloat64)};
    CHECK(torch::allclose(query_triplane(p, grid), torch::full({1, 48, 2}, 2.5, torch::kFloat64)));
    p.uv.fill_(1.0);
    p.vw.fill_(-4.0);
    CHECK(torch::allclose(query_triplane(p, grid), torch::full({1, 48, 2}, -0.5, torch::kFloat64)));
}

TEST_CASE("tri-plane query matches the triple-loop oracle") {
    const std::int64_t D = 8, H = 8, W = 8;
    PlaneTriple p{randn64({1, 4, H, W}, 4), randn64({1, 4, H, D}, 5), randn64({1, 4, W, D}, 6)};
    auto f = points_to_volume(query_triplane(p, make_coordinate_grid({D, H, W}).to(torch::kFloat64)), {D, H, W});
    double worst = 0.0;
    for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t h = 0; h < H; ++h)
                for (std::int64_t w = 0; w < W; ++w)
                    worst = std::max(worst, std::abs(f[0][c][d][h][w].item<double>() -
                                                     oracle::triplane_voxel(p.uv[0], p.uw[0], p.vw[0], c, d, h, w, D, H, W)));
    CHECK(worst <= 1e-6);
}

TEST_CASE("point decoder") {
    torch::manual_seed(7);
    PointDecoder dec(4);
    {
        torch::NoGradGuard ng;
        dec->mlp->fc2->weight.zero_();
        dec->mlp->fc2->bias.zero_();
    }
    auto f = torch::randn({1, 10, 4});
    CHECK(torch::equal(dec(f), f));

    torch::manual_seed(8);
    PointDecoder live(4);
    auto same = torch::randn({1, 1, 4}).expand({1, 2, 4}).contiguous();
    auto out = live(same);
    CHECK(torch::equal(out[0][0], out[0][1]));

    // Scalar MLP oracle: h = f + W2 silu(W1 f + b1) + b2.
    auto x = torch::randn({1, 5, 4}, torch::kFloat32);
    auto y = live(x);
    auto w1 = live->mlp->fc1->weight.to(torch::kFloat64), b1 = live->mlp->fc1->bias.to(torch::kFloat64);
    auto w2 = live->mlp->fc2->weight.to(torch::kFloat64), b2 = live->mlp->fc2->bias.to(torch::kFloat64);
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
        std::vector<double> hidden(static_cast<std::size_t>(w1.size(0)));
        for (std::int64_t j = 0; j < w1.size(0); ++j) {
            double acc = b1[j].item<double>();
            for (int i = 0; i < 4; ++i) acc += w1[j][i].item<double>() * x[0][k][i].item<double>();
            hidden[static_cast<std::size_t>(j)] = acc / (1.0 + std::exp(-acc));
        }
        for (int o = 0; o < 4; ++o) {
            double acc = b2[o].item<double>() + x[0][k][o].item<double>();
            for (std::int64_t j = 0; j < w1.size(0); ++j) acc += w2[o][j].item<double>() * hidden[static_cast<std::size_t>(j)];
            worst = std::max(worst, std::abs(acc - y[0][k][o].item<double>()));
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("implicit decoder produces one condition per level") {
    torch::manual_seed(9);
    ImplicitDecoder dec(8, 2, false);
    TriPlaneFeatures tp;
    tp.levels.push_back({torch::randn({2, 8, 8, 8}), torch::randn({2, 8, 8, 8}), torch::randn({2, 8, 8, 8})});
    tp.levels.push_back({torch::randn({2, 8, 4, 4}), torch::randn({2, 8, 4, 4}), torch::randn({2, 8, 4, 4})});
    auto cs = dec->forward(tp, {{8, 8, 8}, {4, 4, 4}});
    REQUIRE(cs.h.size() == 2);
    CHECK(cs.h[0].sizes() == torch::IntArrayRef{2, 8, 8, 8, 8});
    CHECK(cs.h[1].sizes() == torch::IntArrayRef{2, 8, 4, 4, 4});
    ImplicitDecoder per_level(8, 2, true);
    CHECK(per_level->parameters().size() == 2 * dec->parameters().size());
}
}
