#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "x2ct/conditioning.hpp"
#include "x2ct/drr.hpp"
#include "x2ct/rng.hpp"
#include "x2ct/unet3d.hpp"
#include "x2ct/volume.hpp"

namespace x2ct {

enum class ScheduleKind { linear };
// Reverse-step variance: sigma_t^2 = beta_t, or the forward-posterior variance.
enum class VarianceKind { beta, posterior };

std::string to_string(VarianceKind v);
VarianceKind variance_kind_from_string(const std::string& s);

// Index t runs 1..T; vectors are stored 0-based (entry t-1).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;
    VarianceKind variance = VarianceKind::beta;
    bool clip_y0 = false;

    double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
    double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar.at(static_cast<std::size_t>(t - 1)); }
    double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }
    void check_t(int t) const;
};

// Linear betas from 1e-4 to 0.02, both scaled by 1000/T and capped below 1.
NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::linear, VarianceKind variance = VarianceKind::beta);
// Arbitrary betas in [0, 1); zero betas are accepted for algebra checks.
NoiseSchedule schedule_from_betas(std::vector<double> betas, VarianceKind variance = VarianceKind::beta);

// Per-item coefficient lookup: t {B} int64 -> {B, 1, 1, 1, 1} (broadcast over trailing dims of `like`).
torch::Tensor gather_coef(const std::vector<double>& table, const torch::Tensor& t, const torch::Tensor& like);

// y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps.
torch::Tensor q_sample(const NoiseSchedule& s, const torch::Tensor& y0, const torch::Tensor& t, const torch::Tensor& eps);
torch::Tensor q_sample(const NoiseSchedule& s, const torch::Tensor& y0, int t, const torch::Tensor& eps);

// One forward Markov step y_t ~ N(sqrt(1 - beta_t) y_{t-1}, beta_t I).
torch::Tensor q_step(const NoiseSchedule& s, const torch::Tensor& y_prev, int t, const torch::Tensor& noise);

// standard: (y_t - sqrt(1 - abar_t) eps) / sqrt(abar_t);
// paper_exact: (y_t - (1 - abar_t) eps) / sqrt(abar_t).
enum class Y0Mode { standard, paper_exact };

std::string to_string(Y0Mode m);
Y0Mode y0_mode_from_string(const std::string& s);

torch::Tensor predict_y0(const NoiseSchedule& s, const torch::Tensor& y_t, const torch::Tensor& t,
                         const torch::Tensor& eps_hat, Y0Mode mode = Y0Mode::standard);
torch::Tensor predict_y0(const NoiseSchedule& s, const torch::Tensor& y_t, int t, const torch::Tensor& eps_hat,
                         Y0Mode mode = Y0Mode::standard);

// Ancestral step: mean = (y_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(1 - beta_t),
// then + sigma_t * noise for t > 1. A step with beta_t = 0 returns y_t.
// With s.clip_y0 the mean is the forward posterior mean at y0_hat clamped to [-1, 1]:
// sqrt(abar_{t-1}) beta_t / (1 - abar_t) y0_hat + sqrt(1 - beta_t) (1 - abar_{t-1}) / (1 - abar_t) y_t.
// Without clamping both forms agree.
torch::Tensor p_sample_step(const NoiseSchedule& s, const torch::Tensor& y_t, int t, const torch::Tensor& eps_hat,
                            const torch::Tensor& noise);

// Mean absolute error.
torch::Tensor loss_simple(const torch::Tensor& eps, const torch::Tensor& eps_hat);
// (1/3) sum over A, C, S of the mean absolute difference of mean projections.
torch::Tensor loss_proj(const torch::Tensor& y0, const torch::Tensor& y0_hat);

struct LossReport {
    double simple = 0.0;
    double proj = 0.0;
    double total = 0.0;
    double lambda = 0.0;
};

// Batched training example: front {B,1,H,D}, side {B,1,W,D}, y0 {B,1,D,H,W}.
struct Batch {
    torch::Tensor front, side, y0;
};

// In-memory training set stacked along dim 0 (same layout as Batch).
struct TrainingSet {
    torch::Tensor fronts, sides, volumes;
    std::int64_t size() const { return volumes.defined() ? volumes.size(0) : 0; }
    Batch items(const torch::Tensor& index) const;
};

struct TrainerOptions {
    double lr = 2e-4;
    std::int64_t batch = 4;
    double lambda = -1.0;  // negative selects 1/T
    bool proj_loss = true;
    Y0Mode y0_mode = Y0Mode::standard;
    std::uint64_t seed = 0;
};

struct LossTerms {
    torch::Tensor simple, proj, total;
    double lambda = 0.0;
};

// Conditional diffusion training: uniform t per item, eps-prediction L1 plus
// the weighted projection loss, one Adam step per call.
class DiffusionTrainer {
public:
    DiffusionTrainer(Conditioner conditioner, Denoiser denoiser, NoiseSchedule schedule, TrainerOptions opts);

    double lambda() const;
    // Draws `opts.batch` items with the "data" stream of `step`.
    Batch draw_batch(const TrainingSet& data, std::int64_t step) const;
    // Loss with all randomness (t, eps, z, dropout) derived from `step`.
    LossTerms compute_loss(const Batch& batch, std::int64_t step);
    // Runs one optimizer update at the current step and advances it.
    LossReport train_step(const Batch& batch);
    LossReport train_step(const TrainingSet& data) { return train_step(draw_batch(data, step_)); }

    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s) { step_ = s; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const TrainerOptions& options() const { return opts_; }
    Conditioner& conditioner() { return conditioner_; }
    Denoiser& denoiser() { return denoiser_; }
    torch::optim::Adam& optimizer() { return optimizer_; }

private:
    Conditioner conditioner_;
    Denoiser denoiser_;
    NoiseSchedule schedule_;
    TrainerOptions opts_;
    SeedSplitter seeds_;
    torch::optim::Adam optimizer_;
    std::int64_t step_ = 0;
};

// Full reverse chain t = T..1 from y_T ~ N(0, I) drawn with `seed`. The
// conditions are computed once and reused for every step. Returns {B,1,D,H,W}
// clamped to [-1, 1].
torch::Tensor sample(Conditioner& conditioner, Denoiser& denoiser, const torch::Tensor& front,
                     const torch::Tensor& side, const NoiseSchedule& schedule, std::uint64_t seed);

// Single-pair convenience wrapper returning a normalized volume.
CtVolume sample_volume(Conditioner& conditioner, Denoiser& denoiser, const BiplanarPair& pair,
                       const NoiseSchedule& schedule, std::uint64_t seed, std::array<double, 3> spacing_mm);

}  // namespace x2ct
