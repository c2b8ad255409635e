#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "x2ct/volume.hpp"

namespace x2ct {

enum class View { front, side };
enum class BeamMode { parallel, cone };

std::string to_string(View v);
std::string to_string(BeamMode m);
BeamMode beam_mode_from_string(const std::string& s);

// Ray-casting geometry. The front view integrates along v onto the (u, w)
// plane; the side view integrates along u onto the (v, w) plane.
//
// Cone mode places a point source `source_distance_mm` from the volume centre
// on the entry side; the detector lies on the exit face with one pixel per
// voxel of that face.
struct DrrGeometry {
    BeamMode mode = BeamMode::parallel;
    double source_distance_mm = 1000.0;
    double step_mm = 1.0;
    bool exponential = false;    // report 1 - exp(-k * integral) instead of the integral
    double attenuation_k = 0.05; // per mm, only read when exponential is set

    // Throws InvalidArgument for a geometry that cannot image `vol`.
    void validate(const CtVolume& vol) const;
};

// Front image is H x D, side image is W x D; both normalized to [-1, 1].
struct BiplanarPair {
    torch::Tensor front;
    torch::Tensor side;
};

// Line integrals of mu = (v + 1) / 2 before any display normalization.
// Returns a float64 tensor of shape H x D (front) or W x D (side).
torch::Tensor drr_line_integrals(const CtVolume& vol, View view, const DrrGeometry& geom);

// Per-image min-max normalization to [-1, 1]; a constant image maps to -1.
torch::Tensor normalize_image(const torch::Tensor& img);

torch::Tensor drr_project(const CtVolume& vol, View view, const DrrGeometry& geom);
BiplanarPair make_biplanar_pair(const CtVolume& vol, const DrrGeometry& geom);

// Orthogonal mean projections used by the projection-consistency loss.
// A: mean over w (H x W), C: mean over v (H x D), S: mean over u (W x D).
enum class OrthoAxis { axial, coronal, sagittal };

std::string to_string(OrthoAxis a);

struct OrthoProjection {
    OrthoAxis axis;
    torch::Tensor image;
};

// Differentiable. Accepts {D, H, W} or batched {..., D, H, W} tensors.
torch::Tensor ortho_mean(const torch::Tensor& vol, OrthoAxis axis);
OrthoProjection ortho_project(const CtVolume& vol, OrthoAxis axis);

// `view_tag` is one of front/side/A/C/S.
void save_projection(const torch::Tensor& img, const std::string& view_tag, const std::filesystem::path& path);
torch::Tensor load_projection(const std::filesystem::path& path, std::string* view_tag = nullptr);

}  // namespace x2ct
