#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "x2ct/conditioning.hpp"
#include "x2ct/diffusion.hpp"
#include "x2ct/drr.hpp"
#include "x2ct/unet3d.hpp"
#include "x2ct/volume.hpp"

namespace x2ct {

struct DataSection {
    std::string dataset_dir;  // empty: synthesize phantoms
    std::int64_t n_volumes = 8;
    std::int64_t size = 32;
    int n_ellipsoids = 3;
    std::array<double, 2> density_range{0.0, 100.0};
    bool implant = false;
    double implant_radius_vox = 1.5;
    double implant_hu = 2500.0;
    double spacing_mm = 2.0;
    bool operator==(const DataSection&) const = default;
};

struct DrrSection {
    std::string mode = "parallel";
    double source_distance_mm = 1000.0;
    double step_mm = 1.0;
    bool exponential = false;
    double attenuation_k = 0.05;
    bool operator==(const DrrSection&) const = default;
};

struct ModelSection {
    int n_stages = 3;
    std::int64_t base_channels = 8;
    std::vector<std::int64_t> channel_multipliers{1, 2, 4};
    std::int64_t window_size = 4;
    std::int64_t attention_heads = 2;
    int attention_blocks = 2;
    std::int64_t time_embed_dim = 64;
    double dropout = 0.2;
    std::int64_t regressor_width = 16;
    bool operator==(const ModelSection&) const = default;
};

struct IcmSection {
    std::int64_t stem_channels = 16;
    std::int64_t plane_channels = 16;
    std::int64_t cond_channels = 8;
    double noise_sigma = 0.1;
    bool transpose_vw = false;
    bool per_level_mlp = false;
    bool operator==(const IcmSection&) const = default;
};

struct ScheduleSection {
    int T = 100;
    std::string kind = "linear";
    std::string variance = "beta";
    bool clip_y0 = false;
    bool operator==(const ScheduleSection&) const = default;
};

struct LossSection {
    std::optional<double> lambda;  // unset: 1/T
    std::string predict_y0 = "standard";
    bool operator==(const LossSection&) const = default;
};

struct TrainSection {
    double lr = 2e-4;
    std::int64_t iterations = 2000;
    std::int64_t batch = 4;
    std::uint64_t seed = 0;
    std::int64_t log_every = 50;
    bool operator==(const TrainSection&) const = default;
};

struct AblationSection {
    bool baseline_conditioning = false;
    bool no_proj_loss = false;
    bool no_view_modulators = false;
    bool no_learnable_embedding = false;
    bool resnet_fusion = false;
    bool operator==(const AblationSection&) const = default;
};

struct EvalSection {
    double bone_threshold_hu = 300.0;
    bool operator==(const EvalSection&) const = default;
};

struct ExperimentConfig {
    DataSection data;
    DrrSection drr;
    ModelSection model;
    IcmSection icm;
    ScheduleSection schedule;
    LossSection loss;
    TrainSection train;
    AblationSection ablation;
    EvalSection eval;
    bool operator==(const ExperimentConfig&) const = default;

    // Throws ValidationError naming every offending key.
    void validate() const;
};

// Unknown keys, wrong types and out-of-range values raise ValidationError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json serialize_config(const ExperimentConfig& cfg);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

DenoiserConfig denoiser_config(const ExperimentConfig& cfg);
ConditionerConfig conditioner_config(const ExperimentConfig& cfg);
NoiseSchedule schedule_from_config(const ExperimentConfig& cfg);
TrainerOptions trainer_options(const ExperimentConfig& cfg);
DrrGeometry drr_geometry(const ExperimentConfig& cfg);
// Phantom `index` of the synthetic dataset; its seed comes from the "phantom" stream.
PhantomSpec phantom_spec(const ExperimentConfig& cfg, std::int64_t index);

}  // namespace x2ct
