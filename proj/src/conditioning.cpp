#include "x2ct/conditioning.hpp"

#include "x2ct/errors.hpp"

namespace x2ct {

ConditionerImpl::ConditionerImpl(ConditionerConfig cfg) : cfg_(cfg) {
    if (cfg_.mode == ConditioningMode::baseline) cfg_.triplane.learnable_embedding = false;
    triplane = register_module("triplane", TriplaneGenerator(cfg_.triplane));
    implicit = register_module("implicit",
                               ImplicitDecoder(cfg_.triplane.cond_channels, cfg_.triplane.levels, cfg_.per_level_mlp));
}

torch::Tensor expand_and_add(const torch::Tensor& front, const torch::Tensor& side) {
    if (front.dim() != 4 || side.dim() != 4 || front.size(3) != side.size(3))
        throw InvalidArgument("expand_and_add: views disagree on the w extent");
    const auto h = front.size(2), w = side.size(2);
    auto f = front.permute({0, 1, 3, 2}).unsqueeze(-1).expand({-1, -1, -1, -1, w});
    auto s = side.permute({0, 1, 3, 2}).unsqueeze(3).expand({-1, -1, -1, h, -1});
    return f + s;
}

ConditionSet ConditionerImpl::baseline_forward(const torch::Tensor& x1, const torch::Tensor& x2,
                                               const std::vector<Shape3>& shapes) {
    auto [feat1, feat2] = triplane->stem(x1, x2);
    // No cross-view exchange: the auxiliary input is zero.
    auto x_front = triplane->encode_plane(feat1, torch::zeros_like(feat1));
    auto x_side = triplane->encode_plane(feat2, torch::zeros_like(feat2));
    const auto front = triplane->decode_plane(x_front);
    const auto side = triplane->decode_plane(x_side);
    if (front.size() != shapes.size()) throw InvalidArgument("condition level count mismatch");
    ConditionSet out;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        auto vol = expand_and_add(front[i], side[i]);
        const Shape3 s = shapes[i];
        if (vol.size(2) != s.d || vol.size(3) != s.h || vol.size(4) != s.w)
            throw InvalidArgument("baseline condition level " + std::to_string(i + 1) + " has the wrong shape");
        auto f = vol.flatten(2).transpose(1, 2);
        out.h.push_back(implicit->decode_features(f, s, static_cast<int>(i)));
    }
    return out;
}

ConditionSet ConditionerImpl::forward(const torch::Tensor& x1, const torch::Tensor& x2,
                                      const std::vector<Shape3>& shapes, std::optional<torch::Generator> gen) {
    if (cfg_.mode == ConditioningMode::baseline) return baseline_forward(x1, x2, shapes);
    auto tp = triplane->forward(x1, x2, ViewEmbedding::front(), ViewEmbedding::side(), std::move(gen));
    return implicit->forward(tp, shapes);
}

}  // namespace x2ct
