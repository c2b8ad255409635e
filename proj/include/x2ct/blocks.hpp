#pragma once

#include <torch/torch.h>

namespace x2ct {

// Largest group count <= 8 that divides `channels` and leaves at least four
// channels per group.
std::int64_t norm_groups(std::int64_t channels);

// Pre-activation residual block on 2D feature maps.
struct ResBlock2dImpl : torch::nn::Module {
    ResBlock2dImpl(std::int64_t in, std::int64_t out, std::int64_t stride = 1);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock2d);

// Pre-activation residual block on volumes with an additive per-channel
// embedding bias between the two convolutions.
struct ResBlock3dImpl : torch::nn::Module {
    ResBlock3dImpl(std::int64_t in, std::int64_t out, std::int64_t embed_dim, double dropout);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
    torch::nn::Linear emb_proj{nullptr};
    torch::nn::Dropout drop{nullptr};
    torch::nn::Conv3d skip{nullptr};
};
TORCH_MODULE(ResBlock3d);

// Two-layer perceptron with SiLU between the layers.
struct MlpImpl : torch::nn::Module {
    MlpImpl(std::int64_t in, std::int64_t hidden, std::int64_t out);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Mlp);

torch::nn::Conv2dOptions conv2d_opts(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1);
torch::nn::Conv3dOptions conv3d_opts(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1);

// Sets every parameter named "bias" (at any depth) to zero.
void zero_biases(torch::nn::Module& m);

}  // namespace x2ct
