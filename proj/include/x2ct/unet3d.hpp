#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "x2ct/blocks.hpp"
#include "x2ct/implicit_decoder.hpp"
#include "x2ct/triplane.hpp"
#include "x2ct/volume.hpp"

namespace x2ct {

struct DenoiserConfig {
    int n_stages = 3;
    std::int64_t base_channels = 8;
    std::vector<std::int64_t> channel_multipliers{1, 2, 4};
    std::int64_t window_size = 4;
    std::int64_t attention_heads = 2;
    int attention_blocks = 2;  // alternating regular / shifted windows
    std::int64_t time_embed_dim = 64;
    std::int64_t cond_channels = 8;
    double dropout = 0.2;

    // Throws InvalidArgument for inconsistent settings.
    void validate() const;
    // Also checks that `input` fits the stage and window divisibility rules.
    void validate_input(Shape3 input) const;
    std::int64_t stage_channels(int stage) const;  // stage is 0-based
};

// Spatial extent of every stage for a given input, finest first.
std::vector<Shape3> feature_shapes(const DenoiserConfig& cfg, Shape3 input);

// Sinusoidal code of integer timesteps {B} -> {B, dim}.
torch::Tensor timestep_encoding(const torch::Tensor& t, std::int64_t dim);

// Multi-head self-attention inside non-overlapping 3D windows; with a non-zero
// shift the map is cyclically rolled by -shift first and tokens that came from
// different regions of the unrolled map are masked out of each other's softmax.
struct WindowAttention3dImpl : torch::nn::Module {
    WindowAttention3dImpl(std::int64_t channels, std::int64_t heads, std::int64_t window, std::int64_t shift);

    // Full block: x + attend(LN(x)), then x + MLP(LN(x)). x is {B, C, D, H, W}.
    torch::Tensor forward(const torch::Tensor& x);

    // Attention core on a channels-last map {B, D, H, W, C}: roll, partition,
    // masked attention, merge, unroll. When `weights` is non-null it receives
    // the softmax matrices {B * nW, heads, N, N} in the rolled frame.
    torch::Tensor attend(const torch::Tensor& x, torch::Tensor* weights = nullptr);

    // {nW, N, N} boolean mask (true = excluded) for a map of the given extent.
    torch::Tensor shift_mask(std::int64_t d, std::int64_t h, std::int64_t w) const;

    std::int64_t window() const { return window_; }
    std::int64_t shift() const { return shift_; }
    std::int64_t heads() const { return heads_; }

    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Linear qkv{nullptr}, proj{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};

private:
    std::int64_t channels_, heads_, window_, shift_;
};
TORCH_MODULE(WindowAttention3d);

// 3D U-Net noise estimator. Encoder and decoder features of stage i are each
// concatenated with the condition h[i] and mixed back to stage width by a
// 1x1x1 convolution. Window attention runs only in the deepest stage.
struct DenoiserImpl : torch::nn::Module {
    explicit DenoiserImpl(DenoiserConfig cfg);

    // y_t {B,1,D,H,W}, t {B} (int64, 1..T), cond.h[i] {B,Cc,D_i,H_i,W_i}.
    torch::Tensor forward(const torch::Tensor& y_t, const torch::Tensor& t, const ConditionSet& cond,
                          const ViewEmbedding& s1 = ViewEmbedding::front(),
                          const ViewEmbedding& s2 = ViewEmbedding::side());

    std::int64_t count_parameters() const;
    std::vector<Shape3> feature_shapes(Shape3 input) const { return x2ct::feature_shapes(cfg_, input); }
    const DenoiserConfig& config() const { return cfg_; }

    torch::nn::Linear time_fc1{nullptr}, time_fc2{nullptr};
    Mlp view_mlp{nullptr};
    torch::nn::Conv3d in_conv{nullptr};
    torch::nn::ModuleList enc_blocks{nullptr}, enc_mix{nullptr}, downsamples{nullptr};
    torch::nn::ModuleList attention{nullptr};
    torch::nn::ModuleList upsamples{nullptr}, dec_blocks{nullptr}, dec_mix{nullptr};
    torch::nn::GroupNorm out_norm{nullptr};
    torch::nn::Conv3d out_conv{nullptr};

private:
    DenoiserConfig cfg_;
};
TORCH_MODULE(Denoiser);

}  // namespace x2ct
