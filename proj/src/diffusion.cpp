#include "x2ct/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "x2ct/errors.hpp"
#include "x2ct/precision.hpp"

namespace x2ct {

std::string to_string(VarianceKind v) { return v == VarianceKind::beta ? "beta" : "posterior"; }

VarianceKind variance_kind_from_string(const std::string& s) {
    if (s == "beta") return VarianceKind::beta;
    if (s == "posterior") return VarianceKind::posterior;
    throw InvalidArgument("unknown variance kind '" + s + "'");
}

std::string to_string(Y0Mode m) { return m == Y0Mode::standard ? "standard" : "paper_exact"; }

Y0Mode y0_mode_from_string(const std::string& s) {
    if (s == "standard") return Y0Mode::standard;
    if (s == "paper_exact") return Y0Mode::paper_exact;
    throw InvalidArgument("unknown predict_y0 mode '" + s + "'");
}

void NoiseSchedule::check_t(int t) const {
    if (t < 1 || t > T) throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

NoiseSchedule schedule_from_betas(std::vector<double> betas, VarianceKind variance) {
    if (betas.empty()) throw InvalidArgument("noise schedule needs T >= 1");
    for (double b : betas) {
        if (!(b >= 0.0 && b < 1.0)) throw InvalidArgument("betas must lie in [0, 1)");
    }
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.variance = variance;
    s.beta = std::move(betas);
    long double prod = 1.0L;
    for (double b : s.beta) {
        prod *= 1.0L - static_cast<long double>(b);
        s.alpha_bar.push_back(static_cast<double>(prod));
    }
    for (int t = 1; t <= s.T; ++t) {
        const double b = s.beta_at(t);
        double var = b;
        if (variance == VarianceKind::posterior) {
            const double denom = 1.0 - s.alpha_bar_at(t);
            var = denom > 0.0 ? b * (1.0 - s.alpha_bar_at(t - 1)) / denom : 0.0;
        }
        s.sigma.push_back(std::sqrt(var));
    }
    return s;
}

NoiseSchedule make_schedule(int T, ScheduleKind kind, VarianceKind variance) {
    if (T < 1) throw InvalidArgument("noise schedule needs T >= 1");
    if (kind != ScheduleKind::linear) throw InvalidArgument("unsupported schedule kind");
    const double scale = 1000.0 / static_cast<double>(T);
    const double start = 1e-4 * scale;
    const double end = 0.02 * scale;
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
        const double f = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
        betas[static_cast<std::size_t>(i)] = std::min(start + (end - start) * f, 0.999);
    }
    return schedule_from_betas(std::move(betas), variance);
}

torch::Tensor gather_coef(const std::vector<double>& table, const torch::Tensor& t, const torch::Tensor& like) {
    auto tab = torch::tensor(table, torch::TensorOptions().dtype(torch::kFloat64));
    auto idx = t.to(torch::kInt64) - 1;
    if (idx.numel() > 0 && (idx.min().item<std::int64_t>() < 0 || idx.max().item<std::int64_t>() >= tab.numel()))
        throw InvalidArgument("timestep outside [1, T]");
    std::vector<std::int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
    shape[0] = t.size(0);
    return tab.index_select(0, idx).to(like.dtype()).reshape(shape);
}

namespace {

std::vector<double> map_alpha_bar(const NoiseSchedule& s, double (*f)(double)) {
    std::vector<double> out;
    out.reserve(s.alpha_bar.size());
    for (double a : s.alpha_bar) out.push_back(f(a));
    return out;
}

double sqrt_ab(double a) { return std::sqrt(a); }
double sqrt_one_minus_ab(double a) { return std::sqrt(1.0 - a); }
double one_minus_ab(double a) { return 1.0 - a; }

torch::Tensor full_t(int t, const torch::Tensor& like) {
    return torch::full({like.size(0)}, t, torch::TensorOptions().dtype(torch::kInt64));
}

}  // namespace

torch::Tensor q_sample(const NoiseSchedule& s, const torch::Tensor& y0, const torch::Tensor& t, const torch::Tensor& eps) {
    if (y0.sizes() != eps.sizes()) throw InvalidArgument("q_sample: y0 and eps shapes differ");
    return gather_coef(map_alpha_bar(s, sqrt_ab), t, y0) * y0 + gather_coef(map_alpha_bar(s, sqrt_one_minus_ab), t, y0) * eps;
}

torch::Tensor q_sample(const NoiseSchedule& s, const torch::Tensor& y0, int t, const torch::Tensor& eps) {
    s.check_t(t);
    if (y0.sizes() != eps.sizes()) throw InvalidArgument("q_sample: y0 and eps shapes differ");
    const double a = s.alpha_bar_at(t);
    return std::sqrt(a) * y0 + std::sqrt(1.0 - a) * eps;
}

torch::Tensor q_step(const NoiseSchedule& s, const torch::Tensor& y_prev, int t, const torch::Tensor& noise) {
    s.check_t(t);
    const double b = s.beta_at(t);
    return std::sqrt(1.0 - b) * y_prev + std::sqrt(b) * noise;
}

torch::Tensor predict_y0(const NoiseSchedule& s, const torch::Tensor& y_t, const torch::Tensor& t,
                         const torch::Tensor& eps_hat, Y0Mode mode) {
    auto noise_coef = gather_coef(map_alpha_bar(s, mode == Y0Mode::standard ? sqrt_one_minus_ab : one_minus_ab), t, y_t);
    return (y_t - noise_coef * eps_hat) / gather_coef(map_alpha_bar(s, sqrt_ab), t, y_t);
}

torch::Tensor predict_y0(const NoiseSchedule& s, const torch::Tensor& y_t, int t, const torch::Tensor& eps_hat,
                         Y0Mode mode) {
    s.check_t(t);
    const double a = s.alpha_bar_at(t);
    const double noise_coef = mode == Y0Mode::standard ? std::sqrt(1.0 - a) : 1.0 - a;
    return (y_t - noise_coef * eps_hat) / std::sqrt(a);
}

torch::Tensor p_sample_step(const NoiseSchedule& s, const torch::Tensor& y_t, int t, const torch::Tensor& eps_hat,
                            const torch::Tensor& noise) {
    s.check_t(t);
    const double b = s.beta_at(t);
    const double one_minus_ab = 1.0 - s.alpha_bar_at(t);
    const double eps_coef = b == 0.0 ? 0.0 : b / std::sqrt(one_minus_ab);
    torch::Tensor mean;
    if (s.clip_y0 && b != 0.0) {
        const double ab_prev = s.alpha_bar_at(t - 1);
        auto y0_hat = predict_y0(s, y_t, t, eps_hat).clamp(-1.0, 1.0);
        mean = (std::sqrt(ab_prev) * b / one_minus_ab) * y0_hat +
               (std::sqrt(1.0 - b) * (1.0 - ab_prev) / one_minus_ab) * y_t;
    } else {
        mean = (y_t - eps_coef * eps_hat) / std::sqrt(1.0 - b);
    }
    if (t == 1) return mean;
    return mean + s.sigma_at(t) * noise;
}

torch::Tensor loss_simple(const torch::Tensor& eps, const torch::Tensor& eps_hat) {
    if (eps.sizes() != eps_hat.sizes()) throw InvalidArgument("loss_simple: shape mismatch");
    return (eps - eps_hat).abs().mean();
}

torch::Tensor loss_proj(const torch::Tensor& y0, const torch::Tensor& y0_hat) {
    if (y0.sizes() != y0_hat.sizes()) throw InvalidArgument("loss_proj: shape mismatch");
    auto acc = torch::zeros({}, y0.options());
    for (auto axis : {OrthoAxis::axial, OrthoAxis::coronal, OrthoAxis::sagittal})
        acc = acc + (ortho_mean(y0, axis) - ortho_mean(y0_hat, axis)).abs().mean();
    return acc / 3.0;
}

Batch TrainingSet::items(const torch::Tensor& index) const {
    return {fronts.index_select(0, index), sides.index_select(0, index), volumes.index_select(0, index)};
}

namespace {

std::vector<torch::Tensor> all_parameters(Conditioner& c, Denoiser& d) {
    auto params = c->parameters();
    auto more = d->parameters();
    params.insert(params.end(), more.begin(), more.end());
    return params;
}

}  // namespace

DiffusionTrainer::DiffusionTrainer(Conditioner conditioner, Denoiser denoiser, NoiseSchedule schedule,
                                   TrainerOptions opts)
    : conditioner_(std::move(conditioner)),
      denoiser_(std::move(denoiser)),
      schedule_(std::move(schedule)),
      opts_(opts),
      seeds_(opts.seed),
      optimizer_(all_parameters(conditioner_, denoiser_), torch::optim::AdamOptions(opts.lr)) {
    if (opts_.batch < 1) throw InvalidArgument("batch size must be positive");
}

double DiffusionTrainer::lambda() const {
    if (!opts_.proj_loss) return 0.0;
    return opts_.lambda < 0.0 ? 1.0 / static_cast<double>(schedule_.T) : opts_.lambda;
}

Batch DiffusionTrainer::draw_batch(const TrainingSet& data, std::int64_t step) const {
    if (data.size() == 0) throw InvalidArgument("training set is empty");
    auto gen = seeds_.generator("data", static_cast<std::uint64_t>(step));
    auto idx = torch::randint(0, data.size(), {opts_.batch}, gen, torch::TensorOptions().dtype(torch::kInt64));
    return data.items(idx);
}

LossTerms DiffusionTrainer::compute_loss(const Batch& batch, std::int64_t step) {
    const auto counter = static_cast<std::uint64_t>(step);
    const auto dtype = working_dtype();
    auto y0 = batch.y0.to(dtype);
    auto front = batch.front.to(dtype);
    auto side = batch.side.to(dtype);
    const auto b = y0.size(0);

    auto gen_t = seeds_.generator("t", counter);
    auto t = torch::randint(1, schedule_.T + 1, {b}, gen_t, torch::TensorOptions().dtype(torch::kInt64));
    auto gen_eps = seeds_.generator("eps", counter);
    auto eps = torch::randn(y0.sizes(), gen_eps, y0.options());
    torch::manual_seed(seeds_.seed("dropout", counter));

    auto y_t = q_sample(schedule_, y0, t, eps);
    const Shape3 vol{y0.size(2), y0.size(3), y0.size(4)};
    auto cond = conditioner_->forward(front, side, denoiser_->feature_shapes(vol), seeds_.generator("z", counter));
    auto eps_hat = denoiser_->forward(y_t, t, cond);

    LossTerms terms;
    terms.lambda = lambda();
    terms.simple = loss_simple(eps, eps_hat);
    if (terms.lambda != 0.0) {
        auto y0_hat = predict_y0(schedule_, y_t, t, eps_hat, opts_.y0_mode).clamp(-1.0, 1.0);
        terms.proj = loss_proj(y0, y0_hat);
    } else {
        terms.proj = torch::zeros({}, y0.options());
    }
    terms.total = terms.simple + terms.lambda * terms.proj;
    return terms;
}

LossReport DiffusionTrainer::train_step(const Batch& batch) {
    conditioner_->train();
    denoiser_->train();
    optimizer_.zero_grad();
    auto terms = compute_loss(batch, step_);
    LossReport report;
    report.simple = terms.simple.item<double>();
    report.proj = terms.proj.item<double>();
    report.lambda = terms.lambda;
    report.total = report.simple + report.lambda * report.proj;
    if (!std::isfinite(report.total)) {
        std::ostringstream os;
        os << "training diverged at step " << step_ << ": simple=" << report.simple << " proj=" << report.proj
           << " lambda=" << report.lambda;
        throw TrainingDivergence(os.str(), step_);
    }
    terms.total.backward();
    optimizer_.step();
    ++step_;
    return report;
}

namespace {

// Restores train/eval flags on scope exit.
class EvalScope {
public:
    explicit EvalScope(std::vector<torch::nn::Module*> mods) : mods_(std::move(mods)) {
        for (auto* m : mods_) {
            flags_.push_back(m->is_training());
            m->eval();
        }
    }
    ~EvalScope() {
        for (std::size_t i = 0; i < mods_.size(); ++i) mods_[i]->train(flags_[i]);
    }

private:
    std::vector<torch::nn::Module*> mods_;
    std::vector<bool> flags_;
};

}  // namespace

torch::Tensor sample(Conditioner& conditioner, Denoiser& denoiser, const torch::Tensor& front, const torch::Tensor& side,
                     const NoiseSchedule& schedule, std::uint64_t seed) {
    torch::NoGradGuard no_grad;
    EvalScope scope({conditioner.ptr().get(), denoiser.ptr().get()});
    const auto dtype = working_dtype();
    auto x1 = front.to(dtype), x2 = side.to(dtype);
    if (x1.dim() == 2) x1 = x1.unsqueeze(0).unsqueeze(0);
    if (x2.dim() == 2) x2 = x2.unsqueeze(0).unsqueeze(0);
    const Shape3 vol{x1.size(3), x1.size(2), x2.size(2)};
    const auto b = x1.size(0);
    auto cond = conditioner->forward(x1, x2, denoiser->feature_shapes(vol));

    auto gen = make_generator(seed);
    auto opts = torch::TensorOptions().dtype(dtype);
    auto y = torch::randn({b, 1, vol.d, vol.h, vol.w}, gen, opts);
    for (int t = schedule.T; t >= 1; --t) {
        auto eps_hat = denoiser->forward(y, full_t(t, y), cond);
        auto noise = t > 1 ? torch::randn(y.sizes(), gen, opts) : torch::zeros_like(y);
        y = p_sample_step(schedule, y, t, eps_hat, noise);
    }
    return y.clamp(-1.0, 1.0);
}

CtVolume sample_volume(Conditioner& conditioner, Denoiser& denoiser, const BiplanarPair& pair,
                       const NoiseSchedule& schedule, std::uint64_t seed, std::array<double, 3> spacing_mm) {
    auto y = sample(conditioner, denoiser, pair.front, pair.side, schedule, seed);
    return {y[0][0].to(torch::kFloat32).contiguous(), spacing_mm, ValueSpace::normalized};
}

}  // namespace x2ct
