#include <doctest.h>

#include "oracles.hpp"
#include "x2ct/errors.hpp"
#include "x2ct/metrics.hpp"

using namespace x2ct;

namespace {

torch::Tensor rand64(torch::IntArrayRef shape, std::uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::rand(shape, gen, torch::kFloat64) * 2.0 - 1.0;
}

// Reports the slice mean and the slice standard deviation.
class MomentExtractor : public FeatureExtractor {
public:
    std::vector<double> features(const torch::Tensor& slice) const override {
        return {slice.mean().item<double>(), slice.std().item<double>()};
    }
};

// One-dimensional feature taken from a fixed pixel.
class PixelExtractor : public FeatureExtractor {
public:
    std::vector<double> features(const torch::Tensor& slice) const override { return {slice[0][0].item<double>()}; }
};

}  // namespace

TEST_SUITE("metrics") {
TEST_CASE("psnr values") {
    auto a = rand64({8, 8}, 1);
    CHECK(psnr(a, a) == 100.0);
    auto b = a + 0.1;  // MSE 0.01
    CHECK(psnr(a, b, 2.0) == doctest::Approx(26.0206).epsilon(1e-5));
    CHECK(psnr(torch::full({4}, -1.0), torch::full({4}, 1.0), 2.0) == doctest::Approx(0.0));
}

TEST_CASE("ssim identities") {
    auto a = rand64({16, 16, 16}, 2);
    CHECK(ssim(a, a) == 1.0);
    CHECK(ssim(a[3], a[3]) == 1.0);
    CHECK(std::abs(ssim(a, rand64({16, 16, 16}, 3))) < 0.1);
    CHECK_THROWS_AS(ssim(torch::zeros({8, 8}), torch::zeros({8, 8})), InvalidArgument);
}

TEST_CASE("ssim matches the naive windowed oracle") {
    auto a = rand64({20, 23}, 3), b = (a + 0.3 * rand64({20, 23}, 4)).clamp(-1, 1);
    CHECK(std::abs(ssim(a, b) - oracle::ssim_2d(a, b)) <= 1e-6);
    auto va = rand64({13, 12, 14}, 5), vb = (va * 0.7 + 0.2 * rand64({13, 12, 14}, 6));
    CHECK(std::abs(ssim(va, vb) - oracle::ssim_3d(va, vb)) <= 1e-6);
}

TEST_CASE("constant volumes: slice and volume ssim agree") {
    auto a = torch::full({12, 12, 12}, 0.2, torch::kFloat64), b = a + 0.1;
    auto m = ssim_modes(a, b);
    CHECK(m.avg_2d == doctest::Approx(m.vol_3d).epsilon(1e-12));
    const double c1 = std::pow(0.02, 2);
    const double expect = (2 * 0.2 * 0.3 + c1) / (0.04 + 0.09 + c1);
    CHECK(m.vol_3d == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("identical slices average to the single-slice value") {
    auto slice = rand64({12, 12}, 7);
    auto a = slice.unsqueeze(0).expand({12, 12, 12}).contiguous();
    auto b = (slice * 0.5).unsqueeze(0).expand({12, 12, 12}).contiguous();
    auto m = psnr_modes(a, b);
    CHECK(m.per_axis[0] == doctest::Approx(psnr(slice, slice * 0.5)).epsilon(1e-12));
    auto s = ssim_modes(a, b);
    CHECK(s.per_axis[0] == doctest::Approx(ssim(slice, slice * 0.5)).epsilon(1e-12));
    auto r = evaluate_pair(a, a);
    CHECK(r.ssim_3d == 1.0);
    CHECK(r.psnr_3d == 100.0);
    CHECK(r.psnr_2d_avg == 100.0);
}

TEST_CASE("dice") {
    auto m = torch::zeros({10, 20});
    m.slice(0, 0, 5).fill_(1.0);  // 100 voxels
    CHECK(dice(m, m) == 1.0);
    auto other = torch::zeros({10, 20});
    other.slice(0, 5, 10).fill_(1.0);
    CHECK(dice(m, other) == 0.0);
    auto half = torch::zeros({10, 20});
    half.slice(0, 0, 5).slice(1, 0, 10).fill_(1.0);
    half.slice(0, 5, 10).slice(1, 0, 10).fill_(1.0);  // 100 voxels, 50 shared
    CHECK(dice(m, half) == 0.5);
    CHECK(dice(torch::zeros({3}), torch::zeros({3})) == 1.0);
    CHECK_THROWS_AS(dice(torch::full({3}, 0.5), torch::zeros({3})), InvalidArgument);
}

TEST_CASE("frechet distance") {
    auto a = rand64({16, 16, 16}, 8);
    MomentExtractor ex;
    CHECK(perceptual_metric(a, a, &ex) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK_THROWS_AS(perceptual_metric(a, a, nullptr), UnsupportedOperation);

    // 1-D closed form: (mu1 - mu2)^2 + (s1 - s2)^2 with unbiased variances.
    auto fa = torch::tensor({{1.0}, {2.0}, {3.0}, {4.0}}, torch::kFloat64);
    auto fb = torch::tensor({{0.0}, {4.0}, {8.0}}, torch::kFloat64);
    const double s1 = std::sqrt(5.0 / 3.0), s2 = 4.0;
    CHECK(frechet_distance(fa, fb) == doctest::Approx(std::pow(2.5 - 4.0, 2) + std::pow(s1 - s2, 2)).epsilon(1e-10));

    PixelExtractor px;
    auto b = a + 0.5;
    CHECK(perceptual_metric(a, b, &px) == doctest::Approx(0.25).epsilon(1e-9));
}
}
