#pragma once

#include <array>
#include <optional>
#include <vector>

#include <torch/torch.h>

namespace x2ct {

inline constexpr double kPsnrCapDb = 100.0;
inline constexpr double kNormalizedRange = 2.0;

// 10 log10(range^2 / MSE), capped at 100 dB (zero error reports the cap).
double psnr(const torch::Tensor& a, const torch::Tensor& b, double data_range = kNormalizedRange);

struct SsimOptions {
    double data_range = kNormalizedRange;
    double sigma = 1.5;
    std::int64_t window = 11;
};

// Gaussian-window SSIM averaged over the valid (unpadded) map. Works on 2D or
// 3D inputs; every extent must be at least the window width.
double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opts = {});

// Normalized 1D Gaussian taps (float64).
torch::Tensor gaussian_window(std::int64_t width, double sigma);

struct MetricReport {
    double psnr_2d_avg = 0.0;
    double psnr_3d = 0.0;
    double ssim_2d_avg = 0.0;
    double ssim_3d = 0.0;
    // Slice averages along w, u, v respectively.
    std::array<double, 3> psnr_axis{};
    std::array<double, 3> ssim_axis{};
};

struct ModePair {
    double avg_2d = 0.0;
    double vol_3d = 0.0;
    std::array<double, 3> per_axis{};
};

// Volumes are {D, H, W}. 2D mode averages over every slice along all three axes.
ModePair psnr_modes(const torch::Tensor& a, const torch::Tensor& b, double data_range = kNormalizedRange);
ModePair ssim_modes(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opts = {});
MetricReport evaluate_pair(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opts = {});

// 2|A n B| / (|A| + |B|); both empty gives 1. Inputs must hold only 0/1 values.
double dice(const torch::Tensor& a, const torch::Tensor& b);

// Pluggable per-slice feature extractor for distribution metrics.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    // `slice` is a 2D float64 image; returns a fixed-length feature vector.
    virtual std::vector<double> features(const torch::Tensor& slice) const = 0;
};

// Frechet distance between Gaussians fitted (unbiased covariance) to feature
// sets {N, F}.
double frechet_distance(const torch::Tensor& feats_a, const torch::Tensor& feats_b);

// Frechet distance of extractor features over all slices of both volumes.
// Throws UnsupportedOperation when no extractor is supplied.
double perceptual_metric(const torch::Tensor& vol_a, const torch::Tensor& vol_b, const FeatureExtractor* extractor);

}  // namespace x2ct
