#pragma once

#include <filesystem>
#include <string>

#include "x2ct/config.hpp"
#include "x2ct/icm_reg.hpp"

namespace x2ct {

enum class RunMode { diffusion, icm_reg };

std::string to_string(RunMode m);
RunMode run_mode_from_string(const std::string& s);

// Everything needed for inference. Only the modules of the active mode are set.
struct ModelBundle {
    RunMode mode = RunMode::diffusion;
    ExperimentConfig config;
    NoiseSchedule schedule;
    Conditioner conditioner{nullptr};
    Denoiser denoiser{nullptr};
    IcmRegressor regressor{nullptr};
    std::int64_t step = 0;  // RNG cursor: next training step
};

// Fresh modules; parameter init draws from the "init" stream of the config seed.
ModelBundle build_models(const ExperimentConfig& cfg, RunMode mode);

// Writes <dir>/weights.pt and <dir>/checkpoint.json.
void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& bundle);
// Throws NotFound for a missing checkpoint and FormatError for an inconsistent one.
ModelBundle load_checkpoint(const std::filesystem::path& dir);

// Puts every module of the bundle in eval mode.
void set_eval(ModelBundle& bundle);

}  // namespace x2ct
