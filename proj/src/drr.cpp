#include "x2ct/drr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "x2ct/errors.hpp"

namespace x2ct {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(View v) { return v == View::front ? "front" : "side"; }
std::string to_string(BeamMode m) { return m == BeamMode::parallel ? "parallel" : "cone"; }

BeamMode beam_mode_from_string(const std::string& s) {
    if (s == "parallel") return BeamMode::parallel;
    if (s == "cone") return BeamMode::cone;
    throw InvalidArgument("unknown DRR mode '" + s + "'");
}

std::string to_string(OrthoAxis a) {
    switch (a) {
        case OrthoAxis::axial: return "A";
        case OrthoAxis::coronal: return "C";
        case OrthoAxis::sagittal: return "S";
    }
    return "?";
}

namespace {

using Vec3 = std::array<double, 3>;  // (w, u, v) in millimetres

double diagonal_mm(const CtVolume& vol) {
    const Shape3 s = vol.shape();
    const double a = s.d * vol.spacing_mm[0], b = s.h * vol.spacing_mm[1], c = s.w * vol.spacing_mm[2];
    return std::sqrt(a * a + b * b + c * c);
}

// Trilinear sample of mu at a physical point; the box spans [0, n*spacing) per
// axis and voxel centres sit at (i + 0.5) * spacing. Clamp-to-edge inside.
class MuField {
public:
    explicit MuField(const CtVolume& vol)
        : data_(vol.data.contiguous()), p_(data_.data_ptr<float>()), s_(vol.shape()), spacing_(vol.spacing_mm) {}

    double at(const Vec3& x) const {
        const std::array<std::int64_t, 3> n{s_.d, s_.h, s_.w};
        std::array<std::int64_t, 3> i0{}, i1{};
        std::array<double, 3> f{};
        for (int a = 0; a < 3; ++a) {
            double c = std::clamp(x[a] / spacing_[a] - 0.5, 0.0, static_cast<double>(n[a] - 1));
            i0[a] = std::min(static_cast<std::int64_t>(c), n[a] - 1);
            i1[a] = std::min(i0[a] + 1, n[a] - 1);
            f[a] = c - static_cast<double>(i0[a]);
        }
        double acc = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
            double wgt = 1.0;
            std::array<std::int64_t, 3> idx{};
            for (int a = 0; a < 3; ++a) {
                const bool hi = (corner >> a) & 1;
                wgt *= hi ? f[a] : 1.0 - f[a];
                idx[a] = hi ? i1[a] : i0[a];
            }
            if (wgt == 0.0) continue;
            acc += wgt * mu(idx[0], idx[1], idx[2]);
        }
        return acc;
    }

    double mu(std::int64_t d, std::int64_t h, std::int64_t w) const {
        return 0.5 * (static_cast<double>(p_[(d * s_.h + h) * s_.w + w]) + 1.0);
    }

private:
    torch::Tensor data_;
    const float* p_;
    Shape3 s_;
    std::array<double, 3> spacing_;
};

// Midpoint Riemann sum of mu over the segment a + t * dir, t in [t0, t1],
// with |dir| = 1 and sub-steps no longer than `step`.
double integrate_segment(const MuField& field, const Vec3& a, const Vec3& dir, double t0, double t1, double step) {
    const double len = t1 - t0;
    if (!(len > 0.0)) return 0.0;
    const auto n = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(len / step - 1e-9)));
    const double ds = len / static_cast<double>(n);
    double acc = 0.0;
    for (std::int64_t k = 0; k < n; ++k) {
        const double t = t0 + (static_cast<double>(k) + 0.5) * ds;
        acc += field.at({a[0] + t * dir[0], a[1] + t * dir[1], a[2] + t * dir[2]});
    }
    return acc * ds;
}

// Slab-method clip of a ray against the box [0, ext).
bool clip_to_box(const Vec3& origin, const Vec3& dir, const Vec3& ext, double& t0, double& t1) {
    t0 = -std::numeric_limits<double>::infinity();
    t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (dir[a] == 0.0) {
            if (origin[a] < 0.0 || origin[a] > ext[a]) return false;
            continue;
        }
        double ta = (0.0 - origin[a]) / dir[a];
        double tb = (ext[a] - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t1 > t0;
}

}  // namespace

void DrrGeometry::validate(const CtVolume& vol) const {
    const double min_spacing = *std::min_element(vol.spacing_mm.begin(), vol.spacing_mm.end());
    if (!(step_mm > 0.0)) throw InvalidArgument("DRR step_mm must be positive");
    if (step_mm > min_spacing + 1e-12) throw InvalidArgument("DRR step_mm must not exceed the smallest voxel spacing");
    if (mode == BeamMode::cone && !(source_distance_mm > diagonal_mm(vol)))
        throw InvalidArgument("cone-beam source must lie outside the volume (distance > diagonal)");
    if (exponential && !(attenuation_k > 0.0)) throw InvalidArgument("DRR attenuation_k must be positive");
}

torch::Tensor drr_line_integrals(const CtVolume& vol, View view, const DrrGeometry& geom) {
    if (vol.value_space != ValueSpace::normalized) throw InvalidArgument("drr_project expects a normalized volume");
    geom.validate(vol);
    const Shape3 s = vol.shape();
    const MuField field(vol);
    const Vec3 ext{s.d * vol.spacing_mm[0], s.h * vol.spacing_mm[1], s.w * vol.spacing_mm[2]};

    // Ray axis (1 = u, 2 = v) and the in-plane detector row axis.
    const int ray_axis = view == View::front ? 2 : 1;
    const int row_axis = view == View::front ? 1 : 2;
    const std::int64_t rows = view == View::front ? s.h : s.w;
    const std::int64_t cols = s.d;

    auto img = torch::zeros({rows, cols}, torch::kFloat64);
    auto acc = img.accessor<double, 2>();
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            Vec3 pixel{};
            pixel[0] = (static_cast<double>(c) + 0.5) * vol.spacing_mm[0];
            pixel[row_axis] = (static_cast<double>(r) + 0.5) * vol.spacing_mm[row_axis];
            if (geom.mode == BeamMode::parallel) {
                Vec3 origin = pixel;
                origin[ray_axis] = 0.0;
                Vec3 dir{0.0, 0.0, 0.0};
                dir[ray_axis] = 1.0;
                acc[r][c] = integrate_segment(field, origin, dir, 0.0, ext[ray_axis], geom.step_mm);
            } else {
                Vec3 source{0.5 * ext[0], 0.5 * ext[1], 0.5 * ext[2]};
                source[ray_axis] = 0.5 * ext[ray_axis] - geom.source_distance_mm;
                Vec3 target = pixel;
                target[ray_axis] = ext[ray_axis];
                Vec3 dir{};
                double norm = 0.0;
                for (int a = 0; a < 3; ++a) {
                    dir[a] = target[a] - source[a];
                    norm += dir[a] * dir[a];
                }
                norm = std::sqrt(norm);
                for (double& d : dir) d /= norm;
                double t0 = 0.0, t1 = 0.0;
                if (clip_to_box(source, dir, ext, t0, t1))
                    acc[r][c] = integrate_segment(field, source, dir, t0, t1, geom.step_mm);
            }
        }
    }
    if (geom.exponential) img = 1.0 - torch::exp(-geom.attenuation_k * img);
    return img;
}

torch::Tensor normalize_image(const torch::Tensor& img) {
    auto x = img.to(torch::kFloat64);
    const double lo = x.min().item<double>();
    const double hi = x.max().item<double>();
    if (!(hi > lo)) return torch::full_like(x, -1.0);
    return ((x - lo) * (2.0 / (hi - lo)) - 1.0).clamp(-1.0, 1.0);
}

torch::Tensor drr_project(const CtVolume& vol, View view, const DrrGeometry& geom) {
    return normalize_image(drr_line_integrals(vol, view, geom)).to(torch::kFloat32);
}

BiplanarPair make_biplanar_pair(const CtVolume& vol, const DrrGeometry& geom) {
    return {drr_project(vol, View::front, geom), drr_project(vol, View::side, geom)};
}

torch::Tensor ortho_mean(const torch::Tensor& vol, OrthoAxis axis) {
    if (vol.dim() < 3) throw InvalidArgument("ortho_mean expects a tensor with at least 3 dimensions");
    const std::int64_t nd = vol.dim();
    switch (axis) {
        case OrthoAxis::axial: return vol.mean(nd - 3);
        case OrthoAxis::coronal: return vol.mean(nd - 1).transpose(-1, -2);
        case OrthoAxis::sagittal: return vol.mean(nd - 2).transpose(-1, -2);
    }
    throw InvalidArgument("unknown projection axis");
}

OrthoProjection ortho_project(const CtVolume& vol, OrthoAxis axis) {
    if (vol.value_space != ValueSpace::normalized) throw InvalidArgument("ortho_project expects a normalized volume");
    return {axis, ortho_mean(vol.data, axis).contiguous()};
}

void save_projection(const torch::Tensor& img, const std::string& view_tag, const fs::path& path) {
    if (img.dim() != 2) throw InvalidArgument("projection images must be 2D");
    static const std::array<std::string, 5> tags{"front", "side", "A", "C", "S"};
    if (std::find(tags.begin(), tags.end(), view_tag) == tags.end())
        throw InvalidArgument("unknown projection view tag '" + view_tag + "'");
    write_f32le(path, img);
    json side = {{"shape", {img.size(0), img.size(1)}}, {"view", view_tag}};
    std::ofstream os(sidecar_path(path));
    os << side.dump(2) << "\n";
}

torch::Tensor load_projection(const fs::path& path, std::string* view_tag) {
    std::ifstream is(sidecar_path(path));
    if (!is) throw NotFound("missing sidecar: " + sidecar_path(path).string());
    std::int64_t rows = 0, cols = 0;
    try {
        const json side = json::parse(is);
        rows = side.at("shape").at(0).get<std::int64_t>();
        cols = side.at("shape").at(1).get<std::int64_t>();
        if (view_tag) *view_tag = side.at("view").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError("malformed projection sidecar: " + std::string(e.what()));
    }
    if (rows <= 0 || cols <= 0) throw FormatError("non-positive projection extent");
    return read_f32le(path, rows * cols).reshape({rows, cols});
}

}  // namespace x2ct
