#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <torch/torch.h>

namespace x2ct {

// Fixed HU clip window; normalization maps it affinely onto [-1, 1].
inline constexpr double kHuMin = -1024.0;
inline constexpr double kHuMax = 1500.0;
inline constexpr double kHuAir = -1000.0;

enum class ValueSpace { hounsfield, normalized };

std::string to_string(ValueSpace s);
ValueSpace value_space_from_string(const std::string& s);

// Storage extents in (w, u, v) = (depth D, height H, width W) order.
struct Shape3 {
    std::int64_t d = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t numel() const { return d * h * w; }
    bool operator==(const Shape3&) const = default;
};

// Scalar CT grid. `data` is a contiguous float32 CPU tensor of shape {D, H, W};
// spacing is millimetres per voxel in the same (w, u, v) order.
struct CtVolume {
    torch::Tensor data;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    ValueSpace value_space = ValueSpace::hounsfield;

    Shape3 shape() const;
    // Throws InvalidArgument when an invariant does not hold.
    void validate() const;
};

CtVolume make_volume(Shape3 shape, double fill, std::array<double, 3> spacing_mm,
                     ValueSpace space = ValueSpace::hounsfield);

CtVolume resample_isotropic(const CtVolume& vol, double target_mm);
CtVolume center_crop_or_pad(const CtVolume& vol, Shape3 size);
CtVolume clip_and_normalize(const CtVolume& vol);
CtVolume denormalize(const CtVolume& vol);

// Scalar forms of the HU <-> normalized mapping.
double normalize_hu(double hu);
double denormalize_value(double v);

struct ImplantRod {
    double radius_vox = 1.5;
    double hu = 2500.0;
};

struct PhantomSpec {
    std::uint64_t seed = 1;
    std::int64_t size = 32;
    int n_ellipsoids = 3;
    std::array<double, 2> density_range{0.0, 100.0};
    std::optional<ImplantRod> implant;
    double spacing_mm = 2.0;

    void validate() const;
};

CtVolume generate_phantom(const PhantomSpec& spec);

// Raw little-endian float32 in (w, u, v) order plus `<path>.json` sidecar.
void save_volume(const CtVolume& vol, const std::filesystem::path& path);
CtVolume load_volume(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& raw);

// Shared raw-float helpers for volumes and projection images.
void write_f32le(const std::filesystem::path& path, const torch::Tensor& t);
torch::Tensor read_f32le(const std::filesystem::path& path, std::int64_t expected_count);

}  // namespace x2ct
