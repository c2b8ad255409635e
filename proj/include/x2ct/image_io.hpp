#pragma once

#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace x2ct {

// Window/level used for 8-bit export: [lo, hi] maps to [0, 255].
struct DisplayWindow {
    double lo = -1.0;
    double hi = 1.0;
};

// Writes a single-channel 8-bit PNG. Presentation only; never read back by the pipeline.
void write_png(const std::filesystem::path& path, const torch::Tensor& image, DisplayWindow window = {});

// Lays 2D panels side by side (top-aligned) with `gap` pixels of black between them.
torch::Tensor hstack_panels(const std::vector<torch::Tensor>& panels, std::int64_t gap = 2, double fill = -1.0);
// Stacks panels top to bottom (left-aligned).
torch::Tensor vstack_panels(const std::vector<torch::Tensor>& panels, std::int64_t gap = 2, double fill = -1.0);

}  // namespace x2ct
