#include "x2ct/implicit_decoder.hpp"

#include "x2ct/errors.hpp"
#include "x2ct/precision.hpp"

namespace x2ct {

namespace F = torch::nn::functional;

torch::Tensor make_coordinate_grid(Shape3 shape) {
    if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0) throw InvalidArgument("coordinate grid extents must be positive");
    auto centers = [](std::int64_t n) {
        auto idx = torch::arange(n, torch::kFloat64);
        return (2.0 * idx + 1.0) / static_cast<double>(n) - 1.0;
    };
    auto mesh = torch::meshgrid({centers(shape.d), centers(shape.h), centers(shape.w)}, "ij");
    // mesh = (w, u, v) coordinates; columns are reordered to (u, v, w).
    auto grid = torch::stack({mesh[1].reshape(-1), mesh[2].reshape(-1), mesh[0].reshape(-1)}, 1);
    return grid.to(working_dtype());
}

torch::Tensor sample_plane(const torch::Tensor& plane, const torch::Tensor& pts) {
    if (plane.dim() != 4) throw InvalidArgument("sample_plane expects a {B,C,rows,cols} plane");
    if (pts.dim() != 2 || pts.size(1) != 2) throw InvalidArgument("sample_plane expects {K,2} coordinates");
    const auto b = plane.size(0);
    // grid_sample reads (x, y) = (col, row).
    auto grid = torch::stack({pts.select(1, 1), pts.select(1, 0)}, 1).to(plane.dtype());
    grid = grid.reshape({1, 1, -1, 2}).expand({b, 1, -1, 2});
    auto out = F::grid_sample(plane, grid,
                              F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
    return out.squeeze(2).transpose(1, 2);  // {B, K, C}
}

torch::Tensor query_triplane(const PlaneTriple& planes, const torch::Tensor& grid) {
    if (grid.dim() != 2 || grid.size(1) != 3) throw InvalidArgument("query_triplane expects a {K,3} grid");
    const auto u = grid.select(1, 0), v = grid.select(1, 1), w = grid.select(1, 2);
    return sample_plane(planes.uv, torch::stack({u, v}, 1)) + sample_plane(planes.uw, torch::stack({u, w}, 1)) +
           sample_plane(planes.vw, torch::stack({v, w}, 1));
}

PointDecoderImpl::PointDecoderImpl(std::int64_t channels) {
    mlp = register_module("mlp", Mlp(channels, channels, channels));
}

torch::Tensor PointDecoderImpl::forward(const torch::Tensor& f) { return f + mlp(f); }

torch::Tensor points_to_volume(const torch::Tensor& f, Shape3 shape) {
    if (f.dim() != 3 || f.size(1) != shape.numel()) throw InvalidArgument("point count does not match volume shape");
    return f.transpose(1, 2).reshape({f.size(0), f.size(2), shape.d, shape.h, shape.w});
}

ImplicitDecoderImpl::ImplicitDecoderImpl(std::int64_t channels, int levels, bool per_level_mlp)
    : per_level_(per_level_mlp) {
    decoders = register_module("decoders", torch::nn::ModuleList());
    const int n = per_level_mlp ? levels : 1;
    for (int i = 0; i < n; ++i) decoders->push_back(PointDecoder(channels));
}

torch::Tensor ImplicitDecoderImpl::decode_features(const torch::Tensor& f, Shape3 shape, int level) {
    const std::size_t idx = per_level_ ? static_cast<std::size_t>(level) : 0;
    if (idx >= decoders->size()) throw InvalidArgument("implicit decoder level out of range");
    return points_to_volume(decoders->at<PointDecoderImpl>(idx).forward(f), shape);
}

const torch::Tensor& ImplicitDecoderImpl::grid_for(std::size_t level, Shape3 shape, torch::Dtype dtype) {
    if (grids_.size() <= level) {
        grids_.resize(level + 1);
        grid_shapes_.resize(level + 1);
    }
    if (!grids_[level].defined() || !(grid_shapes_[level] == shape) || grids_[level].scalar_type() != dtype) {
        grids_[level] = make_coordinate_grid(shape).to(dtype);
        grid_shapes_[level] = shape;
    }
    return grids_[level];
}

ConditionSet ImplicitDecoderImpl::forward(const TriPlaneFeatures& tp, const std::vector<Shape3>& shapes) {
    if (tp.levels.size() != shapes.size())
        throw InvalidArgument("tri-plane level count does not match requested condition levels");
    ConditionSet out;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& planes = tp.levels[i];
        const Shape3 s = shapes[i];
        if (planes.uw.size(2) != s.h || planes.uw.size(3) != s.d || planes.vw.size(2) != s.w || planes.vw.size(3) != s.d)
            throw InvalidArgument("tri-plane level " + std::to_string(i + 1) + " does not match the grid shape");
        const auto& grid = grid_for(i, s, planes.uv.scalar_type());
        out.h.push_back(decode_features(query_triplane(planes, grid), s, static_cast<int>(i)));
    }
    return out;
}

}  // namespace x2ct
