#include "x2ct/icm_reg.hpp"

#include <cmath>

#include "x2ct/errors.hpp"
#include "x2ct/precision.hpp"

namespace x2ct {

namespace F = torch::nn::functional;

std::vector<Shape3> level_shapes(Shape3 volume, int levels) {
    std::vector<Shape3> out;
    for (int i = 0; i < levels; ++i) {
        const std::int64_t f = std::int64_t{1} << i;
        if (volume.d % f != 0 || volume.h % f != 0 || volume.w % f != 0)
            throw InvalidArgument("volume extents must be divisible by 2^(levels-1)");
        out.push_back({volume.d / f, volume.h / f, volume.w / f});
    }
    return out;
}

RegressionDecoderImpl::RegressionDecoderImpl(std::int64_t cond_channels, std::int64_t width, int levels) {
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < levels; ++i) {
        const std::int64_t in = i == 0 ? cond_channels : width + cond_channels;
        blocks->push_back(torch::nn::Conv3d(conv3d_opts(in, width, 3)));
    }
    head = register_module("head", torch::nn::Conv3d(conv3d_opts(width, 1, 3)));
}

torch::Tensor RegressionDecoderImpl::forward(const ConditionSet& cond) {
    const auto n = cond.h.size();
    if (n != blocks->size()) throw InvalidArgument("regression decoder level count mismatch");
    torch::Tensor x;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& h = cond.h[n - 1 - k];
        if (k == 0) {
            x = h;
        } else {
            x = F::interpolate(x, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0, 2.0})
                                      .mode(torch::kNearest));
            x = torch::cat({x, h}, 1);
        }
        x = F::silu(blocks->at<torch::nn::Conv3dImpl>(k).forward(x));
    }
    return head(x);
}

IcmRegressorImpl::IcmRegressorImpl(ConditionerConfig cfg, std::int64_t decoder_width) : levels_(cfg.triplane.levels) {
    conditioner = register_module("conditioner", Conditioner(cfg));
    decoder = register_module("decoder", RegressionDecoder(cfg.triplane.cond_channels, decoder_width, levels_));
}

torch::Tensor IcmRegressorImpl::forward(const torch::Tensor& front, const torch::Tensor& side,
                                        std::optional<torch::Generator> gen) {
    const Shape3 vol{front.size(3), front.size(2), side.size(2)};
    return decoder(conditioner->forward(front, side, level_shapes(vol, levels_), std::move(gen)));
}

RegressionTrainer::RegressionTrainer(IcmRegressor model, TrainerOptions opts)
    : model_(std::move(model)),
      opts_(opts),
      seeds_(opts.seed),
      optimizer_(model_->parameters(), torch::optim::AdamOptions(opts.lr)) {
    if (opts_.batch < 1) throw InvalidArgument("batch size must be positive");
}

Batch RegressionTrainer::draw_batch(const TrainingSet& data, std::int64_t step) const {
    if (data.size() == 0) throw InvalidArgument("training set is empty");
    auto gen = seeds_.generator("data", static_cast<std::uint64_t>(step));
    auto idx = torch::randint(0, data.size(), {opts_.batch}, gen, torch::TensorOptions().dtype(torch::kInt64));
    return data.items(idx);
}

torch::Tensor RegressionTrainer::compute_loss(const Batch& batch, std::int64_t step) {
    const auto dtype = working_dtype();
    torch::manual_seed(seeds_.seed("dropout", static_cast<std::uint64_t>(step)));
    auto pred = model_->forward(batch.front.to(dtype), batch.side.to(dtype),
                                seeds_.generator("z", static_cast<std::uint64_t>(step)));
    return (pred - batch.y0.to(dtype)).abs().mean();
}

double RegressionTrainer::train_step(const Batch& batch) {
    model_->train();
    optimizer_.zero_grad();
    auto loss = compute_loss(batch, step_);
    const double value = loss.item<double>();
    if (!std::isfinite(value))
        throw TrainingDivergence("regression training diverged at step " + std::to_string(step_), step_);
    loss.backward();
    optimizer_.step();
    ++step_;
    return value;
}

torch::Tensor icm_reg_predict(IcmRegressor& model, const torch::Tensor& front, const torch::Tensor& side) {
    torch::NoGradGuard no_grad;
    const bool was_training = model->is_training();
    model->eval();
    const auto dtype = working_dtype();
    auto x1 = front.to(dtype), x2 = side.to(dtype);
    if (x1.dim() == 2) x1 = x1.unsqueeze(0).unsqueeze(0);
    if (x2.dim() == 2) x2 = x2.unsqueeze(0).unsqueeze(0);
    auto out = model->forward(x1, x2).clamp(-1.0, 1.0);
    model->train(was_training);
    return out;
}

CtVolume icm_reg_forward(IcmRegressor& model, const BiplanarPair& pair, std::array<double, 3> spacing_mm) {
    auto y = icm_reg_predict(model, pair.front, pair.side);
    return {y[0][0].to(torch::kFloat32).contiguous(), spacing_mm, ValueSpace::normalized};
}

}  // namespace x2ct
