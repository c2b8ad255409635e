#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "x2ct/checkpoint.hpp"
#include "x2ct/metrics.hpp"

namespace x2ct {

namespace fs = std::filesystem;

// Loaded dataset directory (manifest.json + volumes/ + projections/).
struct Dataset {
    fs::path root;
    nlohmann::json manifest;
    std::vector<std::string> ids;
    std::vector<CtVolume> volumes;  // normalized
    std::vector<BiplanarPair> pairs;

    std::int64_t size() const { return static_cast<std::int64_t>(volumes.size()); }
    TrainingSet training_set() const;
};

Dataset load_dataset(const fs::path& root);

// n phantoms plus their biplanar DRRs and a manifest; deterministic in the config seed.
nlohmann::json cmd_make_phantoms(const ExperimentConfig& cfg, std::int64_t n, const fs::path& out_dir);

// Preprocesses a volume (HU volumes are resampled, cropped and normalized) and
// writes it next to its front/side DRRs.
nlohmann::json cmd_synthesize_drr(const ExperimentConfig& cfg, const fs::path& volume_path, const fs::path& out_dir);

struct TrainResult {
    fs::path run_dir;
    std::int64_t steps = 0;
    double final_loss = 0.0;  // mean total loss over the last tenth of training
};

using ProgressFn = std::function<void(std::int64_t step, const LossReport&)>;

// Self-contained run directory: config.json, data/, checkpoint/, train_log.jsonl.
TrainResult cmd_train(const ExperimentConfig& cfg, RunMode mode, const fs::path& run_dir,
                      const ProgressFn& progress = {});

// Reconstructs one volume; the seed drives the initial noise only.
CtVolume reconstruct(ModelBundle& bundle, const BiplanarPair& pair, std::uint64_t seed);

fs::path cmd_sample(const fs::path& checkpoint_dir, const fs::path& front_path, const fs::path& side_path,
                    std::uint64_t seed, const fs::path& out_path);

struct EvalRow {
    std::string volume_id;
    MetricReport report;
    double dice = 0.0;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    EvalRow mean;      // averaged over rows
    EvalRow baseline;  // mean training volume as the prediction for every item
};

nlohmann::json eval_row_json(const EvalRow& row);

// Samples every dataset item (seed from the "eval" stream) and writes
// <out>/<id>.json, <out>/recon/<id>.raw, <out>/metrics.csv and <out>/summary.json.
EvalResult cmd_evaluate(const fs::path& checkpoint_dir, const fs::path& dataset_dir, const fs::path& out_dir);

struct RenderResult {
    std::array<torch::Tensor, 3> panels;  // axial, sagittal, coronal centre slices
    torch::Tensor montage;                // panels stacked top to bottom
};

// Writes axial.png, sagittal.png, coronal.png and montage.png into out_dir.
RenderResult cmd_render(const fs::path& volume_path, const fs::path& out_dir);

struct AblationRow {
    std::string method;
    double psnr = 0.0, ssim = 0.0, psnr3d = 0.0, ssim3d = 0.0;
    double final_loss = 0.0;
    bool diverged = false;
};

// Variant order of the ablation table: baseline, w/o projection loss,
// w/o view modulators, w/o learnable embedding, ResNet fusion, full model.
std::vector<std::pair<std::string, ExperimentConfig>> ablation_variants(const ExperimentConfig& cfg);

// Trains and evaluates every variant from the same seed; writes <out>/ablation.csv.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, RunMode mode, const fs::path& out_dir,
                                    const ProgressFn& progress = {});

inline const char* kAblationHeader = "method,psnr,ssim,psnr3d,ssim3d,final_loss";

}  // namespace x2ct
