#include "x2ct/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "x2ct/errors.hpp"

namespace x2ct {

namespace F = torch::nn::functional;

double psnr(const torch::Tensor& a, const torch::Tensor& b, double data_range) {
    if (a.sizes() != b.sizes()) throw InvalidArgument("psnr: shape mismatch");
    if (!(data_range > 0.0)) throw InvalidArgument("psnr: data_range must be positive");
    const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(data_range * data_range / mse));
}

torch::Tensor gaussian_window(std::int64_t width, double sigma) {
    auto x = torch::arange(width, torch::kFloat64) - static_cast<double>(width - 1) / 2.0;
    auto g = torch::exp(-(x * x) / (2.0 * sigma * sigma));
    return g / g.sum();
}

namespace {

// Valid-mode separable Gaussian filter over every spatial dim of {1,1,...}.
torch::Tensor blur(const torch::Tensor& x, const torch::Tensor& g) {
    const auto nd = x.dim() - 2;
    const auto k = g.size(0);
    auto y = x;
    for (std::int64_t axis = 0; axis < nd; ++axis) {
        std::vector<std::int64_t> shape(static_cast<std::size_t>(nd + 2), 1);
        shape[static_cast<std::size_t>(axis + 2)] = k;
        auto kernel = g.reshape(shape);
        y = nd == 2 ? F::conv2d(y, kernel) : F::conv3d(y, kernel);
    }
    return y;
}

}  // namespace

double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opts) {
    if (a.sizes() != b.sizes()) throw InvalidArgument("ssim: shape mismatch");
    if (a.dim() != 2 && a.dim() != 3) throw InvalidArgument("ssim expects a 2D or 3D input");
    for (auto e : a.sizes()) {
        if (e < opts.window) throw InvalidArgument("ssim: extent smaller than the window");
    }
    const double c1 = std::pow(0.01 * opts.data_range, 2);
    const double c2 = std::pow(0.03 * opts.data_range, 2);
    const auto g = gaussian_window(opts.window, opts.sigma);
    auto x = a.to(torch::kFloat64).unsqueeze(0).unsqueeze(0);
    auto y = b.to(torch::kFloat64).unsqueeze(0).unsqueeze(0);
    auto mu_x = blur(x, g), mu_y = blur(y, g);
    auto sxx = blur(x * x, g) - mu_x * mu_x;
    auto syy = blur(y * y, g) - mu_y * mu_y;
    auto sxy = blur(x * y, g) - mu_x * mu_y;
    auto num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2);
    auto den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2);
    return (num / den).mean().item<double>();
}

namespace {

template <typename Metric>
ModePair slice_modes(const torch::Tensor& a, const torch::Tensor& b, Metric metric) {
    if (a.dim() != 3 || a.sizes() != b.sizes()) throw InvalidArgument("volume metrics expect equal {D,H,W} shapes");
    ModePair out;
    out.vol_3d = metric(a, b);
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t axis = 0; axis < 3; ++axis) {
        double axis_sum = 0.0;
        const auto n = a.size(axis);
        for (std::int64_t i = 0; i < n; ++i) axis_sum += metric(a.select(axis, i), b.select(axis, i));
        out.per_axis[static_cast<std::size_t>(axis)] = axis_sum / static_cast<double>(n);
        total += axis_sum;
        count += n;
    }
    out.avg_2d = total / static_cast<double>(count);
    return out;
}

}  // namespace

ModePair psnr_modes(const torch::Tensor& a, const torch::Tensor& b, double data_range) {
    return slice_modes(a, b, [&](const torch::Tensor& x, const torch::Tensor& y) { return psnr(x, y, data_range); });
}

ModePair ssim_modes(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opts) {
    return slice_modes(a, b, [&](const torch::Tensor& x, const torch::Tensor& y) { return ssim(x, y, opts); });
}

MetricReport evaluate_pair(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opts) {
    const auto p = psnr_modes(a, b, opts.data_range);
    const auto s = ssim_modes(a, b, opts);
    return {p.avg_2d, p.vol_3d, s.avg_2d, s.vol_3d, p.per_axis, s.per_axis};
}

double dice(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) throw InvalidArgument("dice: shape mismatch");
    auto x = a.to(torch::kFloat64), y = b.to(torch::kFloat64);
    auto binary = [](const torch::Tensor& m) { return ((m == 0) | (m == 1)).all().item<bool>(); };
    if (!binary(x) || !binary(y)) throw InvalidArgument("dice expects binary masks");
    const double inter = (x * y).sum().item<double>();
    const double total = x.sum().item<double>() + y.sum().item<double>();
    if (total == 0.0) return 1.0;
    return 2.0 * inter / total;
}

double frechet_distance(const torch::Tensor& feats_a, const torch::Tensor& feats_b) {
    if (feats_a.dim() != 2 || feats_b.dim() != 2 || feats_a.size(1) != feats_b.size(1))
        throw InvalidArgument("frechet_distance expects {N, F} feature sets of equal width");
    if (feats_a.size(0) < 2 || feats_b.size(0) < 2) throw InvalidArgument("frechet_distance needs at least two samples");
    auto fit = [](const torch::Tensor& f) {
        auto x = f.to(torch::kFloat64);
        auto mu = x.mean(0);
        auto c = x - mu;
        auto cov = c.t().matmul(c) / static_cast<double>(x.size(0) - 1);
        return std::make_pair(mu, cov);
    };
    auto [mu_a, cov_a] = fit(feats_a);
    auto [mu_b, cov_b] = fit(feats_b);
    // tr((A^1/2 B A^1/2)^1/2) via two symmetric eigendecompositions.
    auto [evals_a, evecs_a] = torch::linalg_eigh(cov_a);
    auto sqrt_a = evecs_a.matmul(torch::diag(evals_a.clamp_min(0.0).sqrt())).matmul(evecs_a.t());
    auto m = sqrt_a.matmul(cov_b).matmul(sqrt_a);
    m = 0.5 * (m + m.t());
    auto evals_m = torch::linalg_eigvalsh(m);
    const double tr_sqrt = evals_m.clamp_min(0.0).sqrt().sum().item<double>();
    const double mean_term = (mu_a - mu_b).square().sum().item<double>();
    const double d = mean_term + cov_a.trace().item<double>() + cov_b.trace().item<double>() - 2.0 * tr_sqrt;
    return std::max(d, 0.0);
}

double perceptual_metric(const torch::Tensor& vol_a, const torch::Tensor& vol_b, const FeatureExtractor* extractor) {
    if (extractor == nullptr)
        throw UnsupportedOperation("perceptual metrics need an injected feature extractor; none is bundled");
    if (vol_a.dim() != 3 || vol_a.sizes() != vol_b.sizes())
        throw InvalidArgument("perceptual_metric expects equal {D,H,W} volumes");
    auto collect = [&](const torch::Tensor& vol) {
        std::vector<torch::Tensor> rows;
        auto v = vol.to(torch::kFloat64);
        for (std::int64_t axis = 0; axis < 3; ++axis) {
            for (std::int64_t i = 0; i < v.size(axis); ++i) {
                const auto f = extractor->features(v.select(axis, i).contiguous());
                rows.push_back(torch::tensor(f, torch::TensorOptions().dtype(torch::kFloat64)));
            }
        }
        return torch::stack(rows);
    };
    return frechet_distance(collect(vol_a), collect(vol_b));
}

}  // namespace x2ct
