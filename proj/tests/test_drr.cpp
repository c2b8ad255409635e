#include <doctest.h>

#include "oracles.hpp"
#include "x2ct/drr.hpp"
#include "x2ct/errors.hpp"

using namespace x2ct;

namespace {

CtVolume normalized(Shape3 s, double value, double spacing = 1.0) {
    return make_volume(s, value, {spacing, spacing, spacing}, ValueSpace::normalized);
}

CtVolume random_normalized(Shape3 s, std::uint64_t seed, double spacing = 1.0) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return {torch::rand({s.d, s.h, s.w}, gen, torch::kFloat32) * 2.0 - 1.0, {spacing, spacing, spacing},
            ValueSpace::normalized};
}

}  // namespace

TEST_SUITE("drr") {
TEST_CASE("air volume integrates to zero and normalizes to a constant") {
    auto v = normalized({8, 8, 8}, -1.0);
    DrrGeometry g;
    CHECK(drr_line_integrals(v, View::front, g).abs().max().item<double>() == 0.0);
    auto pair = make_biplanar_pair(v, g);
    CHECK(torch::all(pair.front == -1.0).item<bool>());
    CHECK(torch::all(pair.side == -1.0).item<bool>());
}

TEST_CASE("uniform cube gives the path length in parallel mode") {
    auto v = normalized({8, 10, 12}, 1.0, 2.0);
    DrrGeometry g;
    auto f = drr_line_integrals(v, View::front, g);
    auto s = drr_line_integrals(v, View::side, g);
    CHECK(f.sizes() == torch::IntArrayRef{10, 8});
    CHECK(s.sizes() == torch::IntArrayRef{12, 8});
    CHECK(((f - 24.0).abs() / 24.0).max().item<double>() <= 1e-4);
    CHECK(((s - 20.0).abs() / 20.0).max().item<double>() <= 1e-4);
}

TEST_CASE("cone beam chord lengths match the slab oracle") {
    auto v = normalized({16, 16, 16}, 1.0, 1.0);
    DrrGeometry g;
    g.mode = BeamMode::cone;
    g.source_distance_mm = 60.0;
    g.step_mm = 0.25;
    auto img = drr_line_integrals(v, View::front, g);
    const std::array<double, 3> ext{16.0, 16.0, 16.0};
    const std::array<double, 3> src{8.0, 8.0, 8.0 - 60.0};
    for (auto [r, c] : std::vector<std::pair<int, int>>{{0, 0}, {15, 15}, {7, 8}, {0, 15}}) {
        const std::array<double, 3> pix{c + 0.5, r + 0.5, 16.0};
        const double chord = oracle::box_chord(src, pix, ext);
        CHECK(std::abs(img[r][c].item<double>() - chord) / chord <= 1e-3);
    }
    // Off-axis rays are longer than the central one.
    CHECK(img[0][0].item<double>() > img[7][7].item<double>());
}

TEST_CASE("halving the step shrinks the discrepancy to the voxel sum") {
    auto v = random_normalized({12, 12, 12}, 21, 1.0);
    auto mu = (v.data.to(torch::kFloat64) + 1.0) * 0.5;
    auto exact = mu.sum(2).t();  // H x D, spacing 1
    auto err = [&](double step) {
        DrrGeometry g;
        g.step_mm = step;
        return (drr_line_integrals(v, View::front, g) - exact).abs().sum().item<double>();
    };
    // Summed over a sweep: single lattice-aligned steps can integrate exactly.
    double coarse = 0.0, fine = 0.0;
    for (int k = 0; k < 9; ++k) {
        coarse += err(0.6 + 0.025 * k);
        fine += err((0.6 + 0.025 * k) / 2.0);
    }
    CHECK(coarse / fine >= 1.8);
}

TEST_CASE("mirror-symmetric phantom gives equal views") {
    auto base = random_normalized({8, 10, 10}, 22);
    auto sym = (base.data + base.data.transpose(1, 2)) * 0.5;
    CtVolume v{sym.contiguous(), {1, 1, 1}, ValueSpace::normalized};
    auto pair = make_biplanar_pair(v, DrrGeometry{});
    CHECK(torch::allclose(pair.front, pair.side, 0.0, 1e-6));
}

TEST_CASE("projection is deterministic") {
    auto v = random_normalized({8, 8, 8}, 23);
    auto a = make_biplanar_pair(v, DrrGeometry{}), b = make_biplanar_pair(v, DrrGeometry{});
    CHECK(torch::equal(a.front, b.front));
    CHECK(torch::equal(a.side, b.side));
}

TEST_CASE("exponential mode") {
    auto v = normalized({8, 8, 8}, 1.0);
    DrrGeometry g;
    g.exponential = true;
    g.attenuation_k = 0.1;
    auto f = drr_line_integrals(v, View::front, g);
    CHECK(f[3][3].item<double>() == doctest::Approx(1.0 - std::exp(-0.8)).epsilon(1e-6));
}

TEST_CASE("geometry validation") {
    auto v = normalized({8, 8, 8}, 0.0, 1.0);
    DrrGeometry g;
    g.step_mm = 2.0;
    CHECK_THROWS_AS(drr_line_integrals(v, View::front, g), InvalidArgument);
    g = DrrGeometry{};
    g.mode = BeamMode::cone;
    g.source_distance_mm = 5.0;
    CHECK_THROWS_AS(drr_line_integrals(v, View::front, g), InvalidArgument);
    auto hu = make_volume({8, 8, 8}, 0.0, {1, 1, 1});
    CHECK_THROWS_AS(drr_project(hu, View::front, DrrGeometry{}), InvalidArgument);
}

TEST_CASE("constant volume gives constant mean projections") {
    auto v = normalized({4, 5, 6}, 0.3);
    for (auto ax : {OrthoAxis::axial, OrthoAxis::coronal, OrthoAxis::sagittal}) {
        auto p = ortho_project(v, ax).image;
        CHECK((p - 0.3).abs().max().item<double>() < 1e-6);
    }
    CHECK(ortho_project(v, OrthoAxis::axial).image.sizes() == torch::IntArrayRef{5, 6});
    CHECK(ortho_project(v, OrthoAxis::coronal).image.sizes() == torch::IntArrayRef{5, 4});
    CHECK(ortho_project(v, OrthoAxis::sagittal).image.sizes() == torch::IntArrayRef{6, 4});
}

TEST_CASE("2x2x2 axial projection is the pairwise mean") {
    auto data = torch::arange(8, torch::kFloat32).reshape({2, 2, 2});
    CtVolume v{data, {1, 1, 1}, ValueSpace::normalized};
    auto a = ortho_project(v, OrthoAxis::axial).image;
    // entries (h, w) average index h*2+w and 4+h*2+w
    CHECK(torch::equal(a, torch::tensor({{2.0f, 3.0f}, {4.0f, 5.0f}})));
}

TEST_CASE("ortho_mean matches explicit summation and is differentiable") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(24);
    auto x = torch::randn({5, 6, 7}, gen, torch::kFloat64).requires_grad_(true);
    auto ref = oracle::mean_projections(x.detach());
    CHECK(torch::allclose(ortho_mean(x, OrthoAxis::axial), ref[0], 0.0, 1e-12));
    CHECK(torch::allclose(ortho_mean(x, OrthoAxis::coronal), ref[1], 0.0, 1e-12));
    CHECK(torch::allclose(ortho_mean(x, OrthoAxis::sagittal), ref[2], 0.0, 1e-12));
    ortho_mean(x, OrthoAxis::coronal).sum().backward();
    CHECK(torch::allclose(x.grad(), torch::full_like(x, 1.0 / 7.0)));
    auto diff = ortho_mean(x.detach(), OrthoAxis::axial) - ortho_mean(x.detach(), OrthoAxis::axial);
    CHECK(diff.abs().max().item<double>() == 0.0);
}
}
