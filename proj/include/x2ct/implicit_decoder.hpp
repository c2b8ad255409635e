#pragma once

#include <vector>

#include <torch/torch.h>

#include "x2ct/blocks.hpp"
#include "x2ct/triplane.hpp"
#include "x2ct/volume.hpp"

namespace x2ct {

// Voxel-centre lattice over [-1, 1]^3, shape {D*H*W, 3} with columns (u, v, w),
// enumerated row-major in (w, u, v) storage order.
torch::Tensor make_coordinate_grid(Shape3 shape);

// Bilinear lookup of `plane` {B, C, rows, cols} at `pts` {K, 2} = (row, col)
// coordinates in [-1, 1]. align_corners = false, border clamp. Returns {B, K, C}.
torch::Tensor sample_plane(const torch::Tensor& plane, const torch::Tensor& pts);

// f(u,v,w) = uv(u,v) + uw(u,w) + vw(v,w) for every grid point. Returns {B, K, C}.
torch::Tensor query_triplane(const PlaneTriple& planes, const torch::Tensor& grid);

// Multi-resolution 3D conditions; h[i] is {B, C, D_i, H_i, W_i} and h[0] is the finest.
struct ConditionSet {
    std::vector<torch::Tensor> h;
};

// Point-wise feature decoder: h = f + fc2(SiLU(fc1(f))). Coordinates are never inputs.
struct PointDecoderImpl : torch::nn::Module {
    explicit PointDecoderImpl(std::int64_t channels);
    torch::Tensor forward(const torch::Tensor& f);

    Mlp mlp{nullptr};
};
TORCH_MODULE(PointDecoder);

// Reshapes decoded {B, K, C} point features into {B, C, D, H, W}.
torch::Tensor points_to_volume(const torch::Tensor& f, Shape3 shape);

struct ImplicitDecoderImpl : torch::nn::Module {
    ImplicitDecoderImpl(std::int64_t channels, int levels, bool per_level_mlp);

    torch::Tensor decode_features(const torch::Tensor& f, Shape3 shape, int level = 0);
    // `shapes[i]` is the spatial extent of condition level i.
    ConditionSet forward(const TriPlaneFeatures& tp, const std::vector<Shape3>& shapes);

    torch::nn::ModuleList decoders{nullptr};

private:
    bool per_level_;
    std::vector<torch::Tensor> grids_;  // cached coordinate grids per level
    std::vector<Shape3> grid_shapes_;
    const torch::Tensor& grid_for(std::size_t level, Shape3 shape, torch::Dtype dtype);
};
TORCH_MODULE(ImplicitDecoder);

}  // namespace x2ct
