#include "x2ct/triplane.hpp"

#include <cmath>

#include "x2ct/errors.hpp"
#include "x2ct/precision.hpp"

namespace x2ct {

namespace F = torch::nn::functional;

torch::Tensor ViewEmbedding::tensor() const {
    return torch::tensor({s[0], s[1], s[2]}, torch::TensorOptions().dtype(torch::kFloat64)).to(working_dtype());
}

ViewModulators normalize_modulators(torch::Tensor gamma1, torch::Tensor gamma2, double delta) {
    auto denom = torch::sqrt(gamma1 * gamma1 + gamma2 * gamma2 + delta);
    ViewModulators m;
    m.gamma1_bar = gamma1.abs() / denom;
    m.gamma2_bar = gamma2.abs() / denom;
    m.gamma1 = std::move(gamma1);
    m.gamma2 = std::move(gamma2);
    return m;
}

std::pair<torch::Tensor, torch::Tensor> axis_pool_expand(const torch::Tensor& feat1, const torch::Tensor& feat2) {
    if (feat1.dim() != 4 || feat2.dim() != 4) throw InvalidArgument("axis_pool_expand expects {B,C,rows,D} maps");
    if (feat1.size(3) != feat2.size(3)) throw InvalidArgument("axis_pool_expand: views disagree on the w extent");
    if (feat1.size(0) != feat2.size(0) || feat1.size(1) != feat2.size(1))
        throw InvalidArgument("axis_pool_expand: batch or channel mismatch");
    const auto h = feat1.size(2);
    const auto w = feat2.size(2);
    auto aux1to2 = feat1.mean(2, /*keepdim=*/true).expand({-1, -1, w, -1});
    auto aux2to1 = feat2.mean(2, /*keepdim=*/true).expand({-1, -1, h, -1});
    return {aux2to1, aux1to2};
}

torch::Tensor fuse_uv(const torch::Tensor& x_uw, const torch::Tensor& x_vw, const torch::Tensor& gamma1_bar,
                      const torch::Tensor& gamma2_bar, bool transpose_vw) {
    if (x_uw.dim() != 4 || x_vw.dim() != 4) throw InvalidArgument("fuse_uv expects {B,C,rows,cols} planes");
    if (x_uw.size(2) != x_uw.size(3) || x_vw.size(2) != x_vw.size(3))
        throw InvalidArgument("fuse_uv requires square planes (cubic volumes)");
    if (x_uw.sizes() != x_vw.sizes()) throw InvalidArgument("fuse_uv: plane shapes differ");
    const auto c = x_uw.size(1);
    if (gamma1_bar.numel() != c || gamma2_bar.numel() != c)
        throw InvalidArgument("fuse_uv: modulator width does not match plane channels");
    const auto vw = transpose_vw ? x_vw.transpose(2, 3) : x_vw;
    return gamma1_bar.reshape({1, c, 1, 1}) * x_uw + gamma2_bar.reshape({1, c, 1, 1}) * vw;
}

torch::Tensor sine_encoding_2d(std::int64_t channels, std::int64_t rows, std::int64_t cols) {
    if (channels % 4 != 0) throw InvalidArgument("sine encoding needs a channel count divisible by 4");
    const std::int64_t half = channels / 2;
    auto out = torch::empty({channels, rows, cols}, torch::kFloat64);
    auto acc = out.accessor<double, 3>();
    for (std::int64_t k = 0; k < half / 2; ++k) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(half));
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t c = 0; c < cols; ++c) {
                acc[2 * k][r][c] = std::sin(r * freq);
                acc[2 * k + 1][r][c] = std::cos(r * freq);
                acc[half + 2 * k][r][c] = std::sin(c * freq);
                acc[half + 2 * k + 1][r][c] = std::cos(c * freq);
            }
        }
    }
    return out.to(working_dtype());
}

TriplaneGeneratorImpl::TriplaneGeneratorImpl(TriplaneConfig cfg) : cfg_(cfg) {
    if (cfg_.levels < 1) throw InvalidArgument("tri-plane generator needs at least one level");
    if (cfg_.plane_channels % 4 != 0) throw InvalidArgument("plane_channels must be divisible by 4");
    const auto c = cfg_.stem_channels;
    const auto p = cfg_.plane_channels;

    stem_conv = register_module("stem_conv", torch::nn::Conv2d(conv2d_opts(1, c, 3)));
    interleave_conv = register_module("interleave_conv", torch::nn::Conv2d(conv2d_opts(2 * c, c, 3)));

    encoder = register_module("encoder", torch::nn::ModuleList());
    encoder->push_back(ResBlock2d(c, cfg_.levels > 1 ? c : p, 1));
    for (int i = 1; i < cfg_.levels; ++i) encoder->push_back(ResBlock2d(i == 1 ? c : p, p, 2));

    modulator1 = register_module("modulator1", Mlp(3, p, p));
    modulator2 = register_module("modulator2", Mlp(3, p, p));
    if (cfg_.fusion == UvFusion::resnet) resnet_fusion = register_module("resnet_fusion", ResBlock2d(2 * p, p, 1));
    if (cfg_.learnable_embedding) embed_conv = register_module("embed_conv", torch::nn::Conv2d(conv2d_opts(p, p, 3)));

    decoder_blocks = register_module("decoder_blocks", torch::nn::ModuleList());
    decoder_heads = register_module("decoder_heads", torch::nn::ModuleList());
    for (int i = 0; i < cfg_.levels; ++i) {
        decoder_blocks->push_back(ResBlock2d(p, p, 1));
        decoder_heads->push_back(torch::nn::Conv2d(conv2d_opts(p, cfg_.cond_channels, 1)));
    }
}

std::pair<torch::Tensor, torch::Tensor> TriplaneGeneratorImpl::stem(const torch::Tensor& x1, const torch::Tensor& x2) {
    if (x1.dim() != 4 || x2.dim() != 4 || x1.size(1) != 1 || x2.size(1) != 1)
        throw InvalidArgument("stem expects single-channel {B,1,rows,D} images");
    if (x1.size(0) != x2.size(0) || x1.size(3) != x2.size(3))
        throw InvalidArgument("front and side views disagree on batch size or w extent");
    return {F::silu(stem_conv(x1)), F::silu(stem_conv(x2))};
}

torch::Tensor TriplaneGeneratorImpl::encode_plane(const torch::Tensor& feat, const torch::Tensor& aux) {
    auto x = F::silu(interleave_conv(torch::cat({feat, aux}, 1)));
    for (std::size_t i = 0; i < encoder->size(); ++i) x = encoder->at<ResBlock2dImpl>(i).forward(x);
    return x;
}

std::pair<torch::Tensor, torch::Tensor> TriplaneGeneratorImpl::interleaved_encode(const torch::Tensor& feat1,
                                                                                  const torch::Tensor& aux2to1,
                                                                                  const torch::Tensor& feat2,
                                                                                  const torch::Tensor& aux1to2) {
    return {encode_plane(feat1, aux2to1), encode_plane(feat2, aux1to2)};
}

ViewModulators TriplaneGeneratorImpl::compute_modulators(const ViewEmbedding& s1, const ViewEmbedding& s2) {
    return normalize_modulators(modulator1(s1.tensor()), modulator2(s2.tensor()));
}

torch::Tensor TriplaneGeneratorImpl::fuse(const torch::Tensor& x_uw, const torch::Tensor& x_vw, const ViewEmbedding& s1,
                                          const ViewEmbedding& s2) {
    switch (cfg_.fusion) {
        case UvFusion::modulators: {
            const auto m = compute_modulators(s1, s2);
            return fuse_uv(x_uw, x_vw, m.gamma1_bar, m.gamma2_bar, cfg_.transpose_vw);
        }
        case UvFusion::equal_weights: {
            const auto w = torch::full({x_uw.size(1)}, 1.0 / std::sqrt(2.0), x_uw.options());
            return fuse_uv(x_uw, x_vw, w, w, cfg_.transpose_vw);
        }
        case UvFusion::resnet: {
            if (x_uw.sizes() != x_vw.sizes() || x_uw.size(2) != x_uw.size(3))
                throw InvalidArgument("uv fusion requires square planes (cubic volumes)");
            const auto vw = cfg_.transpose_vw ? x_vw.transpose(2, 3) : x_vw;
            return resnet_fusion(torch::cat({x_uw, vw}, 1));
        }
    }
    throw InvalidArgument("unknown uv fusion mode");
}

torch::Tensor TriplaneGeneratorImpl::add_learnable_embedding(const torch::Tensor& x_bar_uv, bool training,
                                                             std::optional<torch::Generator> gen) {
    if (!cfg_.learnable_embedding) return x_bar_uv;
    auto sine = sine_encoding_2d(x_bar_uv.size(1), x_bar_uv.size(2), x_bar_uv.size(3)).to(x_bar_uv.dtype());
    if (training && cfg_.noise_sigma > 0.0) {
        auto z = gen ? torch::randn(sine.sizes(), *gen, sine.options()) : torch::randn(sine.sizes(), sine.options());
        sine = sine + cfg_.noise_sigma * z;
    }
    return x_bar_uv + F::silu(embed_conv(sine.unsqueeze(0)));
}

std::vector<torch::Tensor> TriplaneGeneratorImpl::decode_plane(const torch::Tensor& x) {
    std::vector<torch::Tensor> coarse_to_fine;
    auto h = x;
    for (int i = 0; i < cfg_.levels; ++i) {
        if (i > 0) h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
        h = decoder_blocks->at<ResBlock2dImpl>(i).forward(h);
        coarse_to_fine.push_back(decoder_heads->at<torch::nn::Conv2dImpl>(i).forward(h));
    }
    return {coarse_to_fine.rbegin(), coarse_to_fine.rend()};
}

TriPlaneFeatures TriplaneGeneratorImpl::decode_planes(const torch::Tensor& x_uv, const torch::Tensor& x_uw,
                                                      const torch::Tensor& x_vw) {
    auto uv = decode_plane(x_uv);
    auto uw = decode_plane(x_uw);
    auto vw = decode_plane(x_vw);
    TriPlaneFeatures out;
    for (std::size_t i = 0; i < uv.size(); ++i) out.levels.push_back({uv[i], uw[i], vw[i]});
    return out;
}

TriPlaneFeatures TriplaneGeneratorImpl::forward(const torch::Tensor& x1, const torch::Tensor& x2,
                                                const ViewEmbedding& s1, const ViewEmbedding& s2,
                                                std::optional<torch::Generator> gen) {
    auto [feat1, feat2] = stem(x1, x2);
    auto [aux2to1, aux1to2] = axis_pool_expand(feat1, feat2);
    auto [x_uw, x_vw] = interleaved_encode(feat1, aux2to1, feat2, aux1to2);
    auto x_bar_uv = fuse(x_uw, x_vw, s1, s2);
    auto x_uv = add_learnable_embedding(x_bar_uv, is_training(), std::move(gen));
    return decode_planes(x_uv, x_uw, x_vw);
}

}  // namespace x2ct
