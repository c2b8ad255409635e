#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "x2ct/blocks.hpp"

namespace x2ct {

// Binary view code fed to the modulator MLPs.
struct ViewEmbedding {
    std::array<double, 3> s{0.0, 0.0, 0.0};

    static ViewEmbedding front() { return {{1.0, 0.0, 1.0}}; }
    static ViewEmbedding side() { return {{0.0, 1.0, 1.0}}; }
    torch::Tensor tensor() const;
};

inline constexpr double kModulatorDelta = 1e-8;

struct ViewModulators {
    torch::Tensor gamma1, gamma2;          // raw MLP outputs, shape {C}
    torch::Tensor gamma1_bar, gamma2_bar;  // non-negative, jointly L2-normalized
};

// gamma_i_bar = |gamma_i| / sqrt(gamma_1^2 + gamma_2^2 + delta), element-wise.
ViewModulators normalize_modulators(torch::Tensor gamma1, torch::Tensor gamma2, double delta = kModulatorDelta);

// One level of tri-plane features, each {B, C, rows, cols}:
// uv is H x W, uw is H x D, vw is W x D.
struct PlaneTriple {
    torch::Tensor uv, uw, vw;
};

// levels[0] is the finest level (denoiser stage 1); levels.back() the coarsest.
struct TriPlaneFeatures {
    std::vector<PlaneTriple> levels;
};

// Mean-pools feat1 {B,C,H,D} over u and feat2 {B,C,W,D} over v, then
// replicates along the rows of the other view. Returns (aux2to1, aux1to2).
std::pair<torch::Tensor, torch::Tensor> axis_pool_expand(const torch::Tensor& feat1, const torch::Tensor& feat2);

// Channel-wise modulated sum of the two observed planes. Requires square
// planes of identical shape; `transpose_vw` swaps the spatial axes of x_vw first.
torch::Tensor fuse_uv(const torch::Tensor& x_uw, const torch::Tensor& x_vw, const torch::Tensor& gamma1_bar,
                      const torch::Tensor& gamma2_bar, bool transpose_vw = false);

// 2D sinusoidal positional map {C, rows, cols}: the first C/2 channels encode
// the row index, the rest the column index, as interleaved sin/cos pairs.
torch::Tensor sine_encoding_2d(std::int64_t channels, std::int64_t rows, std::int64_t cols);

enum class UvFusion { modulators, equal_weights, resnet };

struct TriplaneConfig {
    std::int64_t stem_channels = 16;
    std::int64_t plane_channels = 16;  // must be divisible by 4 (sine encoding)
    std::int64_t cond_channels = 8;
    int levels = 3;
    double noise_sigma = 0.1;
    bool transpose_vw = false;
    bool learnable_embedding = true;
    UvFusion fusion = UvFusion::modulators;
};

// Stem, interleaved convolution, plane encoder, view modulators, learnable uv
// embedding and the shared multi-level plane decoder.
struct TriplaneGeneratorImpl : torch::nn::Module {
    explicit TriplaneGeneratorImpl(TriplaneConfig cfg);

    std::pair<torch::Tensor, torch::Tensor> stem(const torch::Tensor& x1, const torch::Tensor& x2);
    std::pair<torch::Tensor, torch::Tensor> interleaved_encode(const torch::Tensor& feat1, const torch::Tensor& aux2to1,
                                                               const torch::Tensor& feat2, const torch::Tensor& aux1to2);
    // Runs one observed view through the interleaved conv and the plane encoder.
    torch::Tensor encode_plane(const torch::Tensor& feat, const torch::Tensor& aux);
    ViewModulators compute_modulators(const ViewEmbedding& s1, const ViewEmbedding& s2);
    torch::Tensor fuse(const torch::Tensor& x_uw, const torch::Tensor& x_vw, const ViewEmbedding& s1,
                       const ViewEmbedding& s2);
    // x_uv = x_bar_uv + CONV(sine + z); z ~ N(0, sigma^2) only when training.
    torch::Tensor add_learnable_embedding(const torch::Tensor& x_bar_uv, bool training,
                                          std::optional<torch::Generator> gen = std::nullopt);
    TriPlaneFeatures decode_planes(const torch::Tensor& x_uv, const torch::Tensor& x_uw, const torch::Tensor& x_vw);
    // Shared decoder applied to one deepest-level plane; returns levels finest first.
    std::vector<torch::Tensor> decode_plane(const torch::Tensor& x);

    // x1: front {B,1,H,D}; x2: side {B,1,W,D}.
    TriPlaneFeatures forward(const torch::Tensor& x1, const torch::Tensor& x2, const ViewEmbedding& s1,
                             const ViewEmbedding& s2, std::optional<torch::Generator> gen = std::nullopt);

    const TriplaneConfig& config() const { return cfg_; }

    torch::nn::Conv2d stem_conv{nullptr};
    torch::nn::Conv2d interleave_conv{nullptr};
    torch::nn::ModuleList encoder{nullptr};
    Mlp modulator1{nullptr}, modulator2{nullptr};
    ResBlock2d resnet_fusion{nullptr};
    torch::nn::Conv2d embed_conv{nullptr};
    torch::nn::ModuleList decoder_blocks{nullptr};
    torch::nn::ModuleList decoder_heads{nullptr};

private:
    TriplaneConfig cfg_;
};
TORCH_MODULE(TriplaneGenerator);

}  // namespace x2ct
