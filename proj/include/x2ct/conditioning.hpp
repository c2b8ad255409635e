#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

#include "x2ct/implicit_decoder.hpp"
#include "x2ct/triplane.hpp"

namespace x2ct {

enum class ConditioningMode {
    icm,       // tri-plane generator + implicit decoder
    baseline,  // 2D features replicated along the missing axis and added
};

struct ConditionerConfig {
    TriplaneConfig triplane;
    ConditioningMode mode = ConditioningMode::icm;
    bool per_level_mlp = false;
};

// Lifts a biplanar pair to multi-resolution 3D conditions.
struct ConditionerImpl : torch::nn::Module {
    explicit ConditionerImpl(ConditionerConfig cfg);

    // x1 {B,1,H,D}, x2 {B,1,W,D}; `shapes` lists the condition extents, finest first.
    ConditionSet forward(const torch::Tensor& x1, const torch::Tensor& x2, const std::vector<Shape3>& shapes,
                         std::optional<torch::Generator> gen = std::nullopt);

    const ConditionerConfig& config() const { return cfg_; }

    TriplaneGenerator triplane{nullptr};
    ImplicitDecoder implicit{nullptr};

private:
    ConditionerConfig cfg_;
    ConditionSet baseline_forward(const torch::Tensor& x1, const torch::Tensor& x2, const std::vector<Shape3>& shapes);
};
TORCH_MODULE(Conditioner);

// Replicates front {B,C,H,D} along v and side {B,C,W,D} along u and sums
// them into a {B,C,D,H,W} volume.
torch::Tensor expand_and_add(const torch::Tensor& front, const torch::Tensor& side);

}  // namespace x2ct
