#pragma once

#include <torch/torch.h>

#include "x2ct/conditioning.hpp"
#include "x2ct/diffusion.hpp"
#include "x2ct/rng.hpp"

namespace x2ct {

// Plain 3D decoder over the multi-resolution conditions: starts at the
// coarsest level, upsamples, and concatenates each finer condition on the way.
struct RegressionDecoderImpl : torch::nn::Module {
    RegressionDecoderImpl(std::int64_t cond_channels, std::int64_t width, int levels);
    torch::Tensor forward(const ConditionSet& cond);

    torch::nn::ModuleList blocks{nullptr};
    torch::nn::Conv3d head{nullptr};
};
TORCH_MODULE(RegressionDecoder);

// ICM followed by a direct volume regressor (no diffusion).
struct IcmRegressorImpl : torch::nn::Module {
    IcmRegressorImpl(ConditionerConfig cfg, std::int64_t decoder_width);

    // front {B,1,H,D}, side {B,1,W,D} -> {B,1,D,H,W}.
    torch::Tensor forward(const torch::Tensor& front, const torch::Tensor& side,
                          std::optional<torch::Generator> gen = std::nullopt);

    Conditioner conditioner{nullptr};
    RegressionDecoder decoder{nullptr};

private:
    int levels_;
};
TORCH_MODULE(IcmRegressor);

// Condition extents for a regression output of the given shape, finest first.
std::vector<Shape3> level_shapes(Shape3 volume, int levels);

class RegressionTrainer {
public:
    RegressionTrainer(IcmRegressor model, TrainerOptions opts);

    Batch draw_batch(const TrainingSet& data, std::int64_t step) const;
    torch::Tensor compute_loss(const Batch& batch, std::int64_t step);
    // One Adam step on the L1 regression loss; returns the pre-update loss.
    double train_step(const Batch& batch);
    double train_step(const TrainingSet& data) { return train_step(draw_batch(data, step_)); }

    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s) { step_ = s; }
    IcmRegressor& model() { return model_; }
    torch::optim::Adam& optimizer() { return optimizer_; }

private:
    IcmRegressor model_;
    TrainerOptions opts_;
    SeedSplitter seeds_;
    torch::optim::Adam optimizer_;
    std::int64_t step_ = 0;
};

// Deterministic inference; returns a normalized volume clamped to [-1, 1].
CtVolume icm_reg_forward(IcmRegressor& model, const BiplanarPair& pair, std::array<double, 3> spacing_mm);
torch::Tensor icm_reg_predict(IcmRegressor& model, const torch::Tensor& front, const torch::Tensor& side);

}  // namespace x2ct
