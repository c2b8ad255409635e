#include "x2ct/unet3d.hpp"

#include <cmath>
#include <limits>

#include "x2ct/errors.hpp"

namespace x2ct {

namespace F = torch::nn::functional;
using torch::indexing::None;
using torch::indexing::Slice;

void DenoiserConfig::validate() const {
    if (n_stages < 1) throw InvalidArgument("denoiser needs at least one stage");
    if (static_cast<int>(channel_multipliers.size()) != n_stages)
        throw InvalidArgument("channel_multipliers must have one entry per stage");
    if (base_channels < 1 || time_embed_dim < 2 || time_embed_dim % 2 != 0 || cond_channels < 1)
        throw InvalidArgument("denoiser widths must be positive (time_embed_dim even)");
    for (auto m : channel_multipliers) {
        if (m < 1) throw InvalidArgument("channel multipliers must be positive");
    }
    if (window_size < 1) throw InvalidArgument("window_size must be positive");
    if (attention_heads < 1 || stage_channels(n_stages - 1) % attention_heads != 0)
        throw InvalidArgument("attention_heads must divide the deepest stage width");
    if (attention_blocks < 0) throw InvalidArgument("attention_blocks must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
}

std::int64_t DenoiserConfig::stage_channels(int stage) const {
    return base_channels * channel_multipliers.at(static_cast<std::size_t>(stage));
}

void DenoiserConfig::validate_input(Shape3 input) const {
    validate();
    const std::int64_t factor = std::int64_t{1} << (n_stages - 1);
    for (auto e : {input.d, input.h, input.w}) {
        if (e <= 0 || e % factor != 0)
            throw InvalidArgument("volume extents must be divisible by 2^(n_stages-1) = " + std::to_string(factor));
        if (attention_blocks > 0 && (e / factor) % window_size != 0)
            throw InvalidArgument("deepest stage extent is not divisible by the attention window");
    }
}

std::vector<Shape3> feature_shapes(const DenoiserConfig& cfg, Shape3 input) {
    cfg.validate_input(input);
    std::vector<Shape3> out;
    for (int i = 0; i < cfg.n_stages; ++i) {
        const std::int64_t f = std::int64_t{1} << i;
        out.push_back({input.d / f, input.h / f, input.w / f});
    }
    return out;
}

torch::Tensor timestep_encoding(const torch::Tensor& t, std::int64_t dim) {
    const std::int64_t half = dim / 2;
    auto opts = torch::TensorOptions().dtype(torch::get_default_dtype_as_scalartype());
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / static_cast<double>(half));
    auto args = t.to(opts.dtype()).unsqueeze(1) * freqs.unsqueeze(0);
    return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

WindowAttention3dImpl::WindowAttention3dImpl(std::int64_t channels, std::int64_t heads, std::int64_t window,
                                             std::int64_t shift)
    : channels_(channels), heads_(heads), window_(window), shift_(shift) {
    if (heads < 1 || channels % heads != 0) throw InvalidArgument("attention heads must divide the channel count");
    if (window < 1 || shift < 0 || shift >= window) throw InvalidArgument("attention shift must lie in [0, window)");
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
    qkv = register_module("qkv", torch::nn::Linear(channels, 3 * channels));
    proj = register_module("proj", torch::nn::Linear(channels, channels));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
    fc1 = register_module("fc1", torch::nn::Linear(channels, 2 * channels));
    fc2 = register_module("fc2", torch::nn::Linear(2 * channels, channels));
}

torch::Tensor WindowAttention3dImpl::shift_mask(std::int64_t d, std::int64_t h, std::int64_t w) const {
    const std::int64_t ws = window_;
    auto ids = torch::zeros({d, h, w}, torch::kInt64);
    if (shift_ > 0) {
        // Three bands per axis in the rolled frame; a window mixing bands spans a wrap-around seam.
        auto bands = [&](std::int64_t n) {
            return std::vector<std::pair<std::int64_t, std::int64_t>>{{0, n - ws}, {n - ws, n - shift_}, {n - shift_, n}};
        };
        std::int64_t label = 0;
        for (auto [d0, d1] : bands(d)) {
            for (auto [h0, h1] : bands(h)) {
                for (auto [w0, w1] : bands(w)) {
                    ids.index_put_({Slice(d0, d1), Slice(h0, h1), Slice(w0, w1)}, label);
                    ++label;
                }
            }
        }
    }
    auto win = ids.reshape({d / ws, ws, h / ws, ws, w / ws, ws}).permute({0, 2, 4, 1, 3, 5}).reshape({-1, ws * ws * ws});
    return win.unsqueeze(2) != win.unsqueeze(1);
}

torch::Tensor WindowAttention3dImpl::attend(const torch::Tensor& x, torch::Tensor* weights) {
    if (x.dim() != 5 || x.size(4) != channels_) throw InvalidArgument("attend expects a {B,D,H,W,C} map");
    const auto b = x.size(0), d = x.size(1), h = x.size(2), w = x.size(3), c = channels_;
    const auto ws = window_;
    if (d % ws != 0 || h % ws != 0 || w % ws != 0)
        throw InvalidArgument("feature extents must be divisible by the attention window");
    const auto n = ws * ws * ws;
    const auto n_win = (d / ws) * (h / ws) * (w / ws);
    const auto dh = c / heads_;

    auto xr = shift_ > 0 ? torch::roll(x, {-shift_, -shift_, -shift_}, {1, 2, 3}) : x;
    auto tokens = xr.reshape({b, d / ws, ws, h / ws, ws, w / ws, ws, c})
                      .permute({0, 1, 3, 5, 2, 4, 6, 7})
                      .reshape({b * n_win, n, c});
    auto qkv_t = qkv(tokens).reshape({b * n_win, n, 3, heads_, dh}).permute({2, 0, 3, 1, 4});
    auto q = qkv_t[0], k = qkv_t[1], v = qkv_t[2];
    auto logits = torch::matmul(q, k.transpose(-2, -1)) * (1.0 / std::sqrt(static_cast<double>(dh)));
    if (shift_ > 0) {
        auto mask = shift_mask(d, h, w).unsqueeze(1).unsqueeze(0);  // {1, nW, 1, N, N}
        logits = logits.reshape({b, n_win, heads_, n, n})
                     .masked_fill(mask, -std::numeric_limits<double>::infinity())
                     .reshape({b * n_win, heads_, n, n});
    }
    auto attn = torch::softmax(logits, -1);
    if (weights) *weights = attn;
    auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b * n_win, n, c});
    out = proj(out);
    out = out.reshape({b, d / ws, h / ws, w / ws, ws, ws, ws, c})
              .permute({0, 1, 4, 2, 5, 3, 6, 7})
              .reshape({b, d, h, w, c});
    return shift_ > 0 ? torch::roll(out, {shift_, shift_, shift_}, {1, 2, 3}) : out;
}

torch::Tensor WindowAttention3dImpl::forward(const torch::Tensor& x) {
    auto t = x.permute({0, 2, 3, 4, 1});
    t = t + attend(norm1(t));
    t = t + fc2(F::gelu(fc1(norm2(t))));
    return t.permute({0, 4, 1, 2, 3}).contiguous();
}

DenoiserImpl::DenoiserImpl(DenoiserConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto e = cfg_.time_embed_dim;
    const auto cc = cfg_.cond_channels;
    time_fc1 = register_module("time_fc1", torch::nn::Linear(e, e));
    time_fc2 = register_module("time_fc2", torch::nn::Linear(e, e));
    view_mlp = register_module("view_mlp", Mlp(6, e, e));
    in_conv = register_module("in_conv", torch::nn::Conv3d(conv3d_opts(1, cfg_.stage_channels(0), 3)));

    enc_blocks = register_module("enc_blocks", torch::nn::ModuleList());
    enc_mix = register_module("enc_mix", torch::nn::ModuleList());
    downsamples = register_module("downsamples", torch::nn::ModuleList());
    upsamples = register_module("upsamples", torch::nn::ModuleList());
    dec_blocks = register_module("dec_blocks", torch::nn::ModuleList());
    dec_mix = register_module("dec_mix", torch::nn::ModuleList());
    attention = register_module("attention", torch::nn::ModuleList());

    for (int i = 0; i < cfg_.n_stages; ++i) {
        const auto ci = cfg_.stage_channels(i);
        const auto prev = i == 0 ? ci : cfg_.stage_channels(i - 1);
        enc_blocks->push_back(ResBlock3d(prev, ci, e, cfg_.dropout));
        enc_mix->push_back(torch::nn::Conv3d(conv3d_opts(ci + cc, ci, 1)));
        if (i + 1 < cfg_.n_stages) {
            downsamples->push_back(torch::nn::Conv3d(conv3d_opts(ci, ci, 3, 2)));
            upsamples->push_back(torch::nn::Conv3d(conv3d_opts(cfg_.stage_channels(i + 1), ci, 3)));
        }
        dec_blocks->push_back(ResBlock3d(2 * ci, ci, e, cfg_.dropout));
        dec_mix->push_back(torch::nn::Conv3d(conv3d_opts(ci + cc, ci, 1)));
    }
    const auto deep = cfg_.stage_channels(cfg_.n_stages - 1);
    for (int k = 0; k < cfg_.attention_blocks; ++k) {
        const std::int64_t shift = (k % 2 == 1) ? cfg_.window_size / 2 : 0;
        attention->push_back(WindowAttention3d(deep, cfg_.attention_heads, cfg_.window_size, shift));
    }
    const auto c0 = cfg_.stage_channels(0);
    out_norm = register_module("out_norm", torch::nn::GroupNorm(norm_groups(c0), c0));
    out_conv = register_module("out_conv", torch::nn::Conv3d(conv3d_opts(c0 + 1, 1, 3)));
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& y_t, const torch::Tensor& t, const ConditionSet& cond,
                                    const ViewEmbedding& s1, const ViewEmbedding& s2) {
    if (y_t.dim() != 5 || y_t.size(1) != 1) throw InvalidArgument("denoiser expects a {B,1,D,H,W} input");
    const Shape3 in{y_t.size(2), y_t.size(3), y_t.size(4)};
    const auto shapes = feature_shapes(in);
    if (cond.h.size() != shapes.size()) throw InvalidArgument("condition set must have one volume per stage");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& h = cond.h[i];
        if (h.dim() != 5 || h.size(0) != y_t.size(0) || h.size(1) != cfg_.cond_channels || h.size(2) != shapes[i].d ||
            h.size(3) != shapes[i].h || h.size(4) != shapes[i].w)
            throw InvalidArgument("condition " + std::to_string(i + 1) + " does not match denoiser stage shape");
    }
    if (t.dim() != 1 || t.size(0) != y_t.size(0)) throw InvalidArgument("timesteps must be a {B} tensor");

    auto emb = time_fc2(F::silu(time_fc1(timestep_encoding(t, cfg_.time_embed_dim))));
    auto views = torch::cat({s1.tensor(), s2.tensor()}).to(emb.dtype());
    emb = emb + view_mlp(views).unsqueeze(0);

    const int n = cfg_.n_stages;
    auto x = in_conv(y_t);
    std::vector<torch::Tensor> skips;
    for (int i = 0; i < n; ++i) {
        x = enc_blocks->at<ResBlock3dImpl>(i).forward(x, emb);
        x = enc_mix->at<torch::nn::Conv3dImpl>(i).forward(torch::cat({x, cond.h[i]}, 1));
        skips.push_back(x);
        if (i + 1 < n) x = downsamples->at<torch::nn::Conv3dImpl>(i).forward(x);
    }
    for (std::size_t k = 0; k < attention->size(); ++k) x = attention->at<WindowAttention3dImpl>(k).forward(x);
    for (int i = n - 1; i >= 0; --i) {
        if (i + 1 < n) {
            x = F::interpolate(x, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0, 2.0})
                                      .mode(torch::kNearest));
            x = upsamples->at<torch::nn::Conv3dImpl>(i).forward(x);
        }
        x = dec_blocks->at<ResBlock3dImpl>(i).forward(torch::cat({x, skips[i]}, 1), emb);
        x = dec_mix->at<torch::nn::Conv3dImpl>(i).forward(torch::cat({x, cond.h[i]}, 1));
    }
    // The raw input joins the head so the output mean can follow the input mean.
    return out_conv(torch::cat({F::silu(out_norm(x)), y_t}, 1));
}

std::int64_t DenoiserImpl::count_parameters() const {
    std::int64_t total = 0;
    for (const auto& p : parameters()) total += p.numel();
    return total;
}

}  // namespace x2ct
