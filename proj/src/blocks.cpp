#include "x2ct/blocks.hpp"

namespace x2ct {

namespace F = torch::nn::functional;

std::int64_t norm_groups(std::int64_t channels) {
    for (std::int64_t g = 8; g > 1; --g) {
        if (channels % g == 0 && channels / g >= 4) return g;
    }
    return 1;
}

torch::nn::Conv2dOptions conv2d_opts(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride) {
    return torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2);
}

torch::nn::Conv3dOptions conv3d_opts(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride) {
    return torch::nn::Conv3dOptions(in, out, k).stride(stride).padding(k / 2);
}

ResBlock2dImpl::ResBlock2dImpl(std::int64_t in, std::int64_t out, std::int64_t stride) {
    norm1 = register_module("norm1", torch::nn::GroupNorm(norm_groups(in), in));
    conv1 = register_module("conv1", torch::nn::Conv2d(conv2d_opts(in, out, 3, stride)));
    norm2 = register_module("norm2", torch::nn::GroupNorm(norm_groups(out), out));
    conv2 = register_module("conv2", torch::nn::Conv2d(conv2d_opts(out, out, 3)));
    if (in != out || stride != 1) skip = register_module("skip", torch::nn::Conv2d(conv2d_opts(in, out, 1, stride)));
}

torch::Tensor ResBlock2dImpl::forward(const torch::Tensor& x) {
    auto h = conv1(F::silu(norm1(x)));
    h = conv2(F::silu(norm2(h)));
    return h + (skip ? skip(x) : x);
}

ResBlock3dImpl::ResBlock3dImpl(std::int64_t in, std::int64_t out, std::int64_t embed_dim, double dropout) {
    norm1 = register_module("norm1", torch::nn::GroupNorm(norm_groups(in), in));
    conv1 = register_module("conv1", torch::nn::Conv3d(conv3d_opts(in, out, 3)));
    emb_proj = register_module("emb_proj", torch::nn::Linear(embed_dim, out));
    norm2 = register_module("norm2", torch::nn::GroupNorm(norm_groups(out), out));
    drop = register_module("drop", torch::nn::Dropout(dropout));
    conv2 = register_module("conv2", torch::nn::Conv3d(conv3d_opts(out, out, 3)));
    if (in != out) skip = register_module("skip", torch::nn::Conv3d(conv3d_opts(in, out, 1)));
}

torch::Tensor ResBlock3dImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
    auto h = conv1(F::silu(norm1(x)));
    h = h + emb_proj(F::silu(emb)).unsqueeze(-1).unsqueeze(-1).unsqueeze(-1);
    h = conv2(drop(F::silu(norm2(h))));
    return h + (skip ? skip(x) : x);
}

MlpImpl::MlpImpl(std::int64_t in, std::int64_t hidden, std::int64_t out) {
    fc1 = register_module("fc1", torch::nn::Linear(in, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, out));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return fc2(F::silu(fc1(x))); }

void zero_biases(torch::nn::Module& m) {
    torch::NoGradGuard no_grad;
    for (auto& item : m.named_parameters(/*recurse=*/true)) {
        const std::string& name = item.key();
        if (name == "bias" || (name.size() > 5 && name.ends_with(".bias"))) item.value().zero_();
    }
}

}  // namespace x2ct
