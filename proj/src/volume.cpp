#include "x2ct/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "x2ct/errors.hpp"

namespace x2ct {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(ValueSpace s) { return s == ValueSpace::hounsfield ? "hounsfield" : "normalized"; }

ValueSpace value_space_from_string(const std::string& s) {
    if (s == "hounsfield") return ValueSpace::hounsfield;
    if (s == "normalized") return ValueSpace::normalized;
    throw FormatError("unknown value_space '" + s + "'");
}

Shape3 CtVolume::shape() const {
    if (!data.defined() || data.dim() != 3) return {};
    return {data.size(0), data.size(1), data.size(2)};
}

void CtVolume::validate() const {
    if (!data.defined() || data.dim() != 3) throw InvalidArgument("volume data must be a 3D tensor");
    if (data.scalar_type() != torch::kFloat32) throw InvalidArgument("volume data must be float32");
    for (double s : spacing_mm) {
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("volume spacing must be positive");
    }
    if (!torch::isfinite(data).all().item<bool>()) throw InvalidArgument("volume contains non-finite values");
    if (value_space == ValueSpace::normalized) {
        if (data.numel() > 0 && (data.min().item<float>() < -1.0f || data.max().item<float>() > 1.0f))
            throw InvalidArgument("normalized volume has values outside [-1, 1]");
    }
}

CtVolume make_volume(Shape3 shape, double fill, std::array<double, 3> spacing_mm, ValueSpace space) {
    if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0) throw InvalidArgument("volume extents must be positive");
    return {torch::full({shape.d, shape.h, shape.w}, fill, torch::kFloat32), spacing_mm, space};
}

namespace {

// Linear weights for sampling index-space coordinate `x` on an axis of length n
// with clamp-to-edge.
struct Tap {
    std::int64_t i0, i1;
    double w1;
};

Tap linear_tap(double x, std::int64_t n) {
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    auto i0 = static_cast<std::int64_t>(std::floor(x));
    i0 = std::min(i0, n - 1);
    const std::int64_t i1 = std::min(i0 + 1, n - 1);
    return {i0, i1, x - static_cast<double>(i0)};
}

}  // namespace

CtVolume resample_isotropic(const CtVolume& vol, double target_mm) {
    if (!(target_mm > 0.0) || !std::isfinite(target_mm))
        throw InvalidArgument("resample_isotropic: target_mm must be positive");
    if (vol.value_space != ValueSpace::hounsfield)
        throw InvalidArgument("resample_isotropic: expects a hounsfield volume");
    const Shape3 in = vol.shape();
    const std::array<std::int64_t, 3> in_ext{in.d, in.h, in.w};
    std::array<std::int64_t, 3> out_ext{};
    std::array<std::vector<Tap>, 3> taps;
    for (int a = 0; a < 3; ++a) {
        const double extent_mm = static_cast<double>(in_ext[a]) * vol.spacing_mm[a];
        out_ext[a] = std::max<std::int64_t>(1, std::llround(extent_mm / target_mm));
        taps[a].reserve(static_cast<std::size_t>(out_ext[a]));
        for (std::int64_t k = 0; k < out_ext[a]; ++k) {
            const double pos_mm = (static_cast<double>(k) + 0.5) * target_mm;
            taps[a].push_back(linear_tap(pos_mm / vol.spacing_mm[a] - 0.5, in_ext[a]));
        }
    }

    const auto src = vol.data.contiguous();
    const float* p = src.data_ptr<float>();
    auto out = torch::empty({out_ext[0], out_ext[1], out_ext[2]}, torch::kFloat32);
    float* q = out.data_ptr<float>();
    auto at = [&](std::int64_t d, std::int64_t h, std::int64_t w) -> double {
        return p[(d * in.h + h) * in.w + w];
    };
    for (std::int64_t d = 0; d < out_ext[0]; ++d) {
        const Tap& td = taps[0][d];
        for (std::int64_t h = 0; h < out_ext[1]; ++h) {
            const Tap& th = taps[1][h];
            for (std::int64_t w = 0; w < out_ext[2]; ++w) {
                const Tap& tw = taps[2][w];
                auto lerp_w = [&](std::int64_t dd, std::int64_t hh) {
                    return at(dd, hh, tw.i0) * (1.0 - tw.w1) + at(dd, hh, tw.i1) * tw.w1;
                };
                auto lerp_hw = [&](std::int64_t dd) {
                    return lerp_w(dd, th.i0) * (1.0 - th.w1) + lerp_w(dd, th.i1) * th.w1;
                };
                // Zero weights are skipped so identity resampling stays exact.
                double v = td.w1 == 0.0 ? lerp_hw(td.i0) : lerp_hw(td.i0) * (1.0 - td.w1) + lerp_hw(td.i1) * td.w1;
                *q++ = static_cast<float>(v);
            }
        }
    }
    return {out, {target_mm, target_mm, target_mm}, ValueSpace::hounsfield};
}

CtVolume center_crop_or_pad(const CtVolume& vol, Shape3 size) {
    if (size.d <= 0 || size.h <= 0 || size.w <= 0) throw InvalidArgument("center_crop_or_pad: size must be positive");
    const Shape3 in = vol.shape();
    const double pad = vol.value_space == ValueSpace::hounsfield ? kHuMin : -1.0;
    auto out = torch::full({size.d, size.h, size.w}, pad, torch::kFloat32);

    // Offsets of the output window inside the input (negative means padding).
    const std::array<std::int64_t, 3> in_ext{in.d, in.h, in.w};
    const std::array<std::int64_t, 3> out_ext{size.d, size.h, size.w};
    std::array<std::int64_t, 3> src0{}, dst0{}, len{};
    for (int a = 0; a < 3; ++a) {
        const std::int64_t off = (in_ext[a] - out_ext[a]) / 2;
        src0[a] = std::max<std::int64_t>(off, 0);
        dst0[a] = std::max<std::int64_t>(-off, 0);
        len[a] = std::min(in_ext[a] - src0[a], out_ext[a] - dst0[a]);
    }
    using torch::indexing::Slice;
    out.index_put_({Slice(dst0[0], dst0[0] + len[0]), Slice(dst0[1], dst0[1] + len[1]), Slice(dst0[2], dst0[2] + len[2])},
                   vol.data.index({Slice(src0[0], src0[0] + len[0]), Slice(src0[1], src0[1] + len[1]),
                                   Slice(src0[2], src0[2] + len[2])}));
    return {out, vol.spacing_mm, vol.value_space};
}

double normalize_hu(double hu) {
    const double c = std::clamp(hu, kHuMin, kHuMax);
    return 2.0 * (c - kHuMin) / (kHuMax - kHuMin) - 1.0;
}

double denormalize_value(double v) { return (v + 1.0) * 0.5 * (kHuMax - kHuMin) + kHuMin; }

CtVolume clip_and_normalize(const CtVolume& vol) {
    if (vol.value_space != ValueSpace::hounsfield)
        throw InvalidArgument("clip_and_normalize: expects a hounsfield volume");
    auto d = vol.data.to(torch::kFloat64).clamp(kHuMin, kHuMax);
    d = (d - kHuMin) * (2.0 / (kHuMax - kHuMin)) - 1.0;
    // Guard against a rounding overshoot past the closed interval.
    d = d.clamp(-1.0, 1.0);
    return {d.to(torch::kFloat32).contiguous(), vol.spacing_mm, ValueSpace::normalized};
}

CtVolume denormalize(const CtVolume& vol) {
    if (vol.value_space != ValueSpace::normalized) throw InvalidArgument("denormalize: expects a normalized volume");
    auto d = (vol.data.to(torch::kFloat64) + 1.0) * (0.5 * (kHuMax - kHuMin)) + kHuMin;
    return {d.to(torch::kFloat32).contiguous(), vol.spacing_mm, ValueSpace::hounsfield};
}

void PhantomSpec::validate() const {
    if (size < 8 || size % 4 != 0)
        throw InvalidArgument("phantom size must be >= 8 and divisible by 4 (three U-Net stages)");
    if (n_ellipsoids < 0) throw InvalidArgument("phantom n_ellipsoids must be non-negative");
    if (density_range[0] > density_range[1]) throw InvalidArgument("phantom density_range is reversed");
    if (!(spacing_mm > 0.0)) throw InvalidArgument("phantom spacing must be positive");
    if (implant && !(implant->radius_vox > 0.0)) throw InvalidArgument("implant radius must be positive");
}

CtVolume generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const std::int64_t n = spec.size;
    const double sz = static_cast<double>(n);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    struct Ellipsoid {
        std::array<double, 3> center, radii;
        double tissue_hu;
        double shell_hu;  // NaN when the ellipsoid has no bone shell
    };
    std::vector<Ellipsoid> ellipsoids;
    for (int i = 0; i < spec.n_ellipsoids; ++i) {
        Ellipsoid e{};
        for (int a = 0; a < 3; ++a) {
            e.center[a] = uniform(0.3, 0.7) * sz;
            e.radii[a] = uniform(0.15, 0.3) * sz;
        }
        e.tissue_hu = uniform(spec.density_range[0], spec.density_range[1]);
        e.shell_hu = (i % 2 == 1) ? uniform(400.0, 1200.0) : std::nan("");
        ellipsoids.push_back(e);
    }
    std::array<double, 2> rod_center{};
    if (spec.implant) {
        rod_center = {uniform(0.35, 0.65) * sz, uniform(0.35, 0.65) * sz};
    }

    auto out = torch::full({n, n, n}, kHuAir, torch::kFloat32);
    float* p = out.data_ptr<float>();
    for (std::int64_t d = 0; d < n; ++d) {
        for (std::int64_t h = 0; h < n; ++h) {
            for (std::int64_t w = 0; w < n; ++w) {
                const std::array<double, 3> x{d + 0.5, h + 0.5, w + 0.5};
                double v = kHuAir;
                for (const auto& e : ellipsoids) {
                    double r2 = 0.0;
                    for (int a = 0; a < 3; ++a) {
                        const double t = (x[a] - e.center[a]) / e.radii[a];
                        r2 += t * t;
                    }
                    if (r2 <= 1.0) v = (!std::isnan(e.shell_hu) && r2 >= 0.7 * 0.7) ? e.shell_hu : e.tissue_hu;
                }
                if (spec.implant) {
                    const double du = x[1] - rod_center[0];
                    const double dv = x[2] - rod_center[1];
                    if (du * du + dv * dv <= spec.implant->radius_vox * spec.implant->radius_vox && x[0] >= 0.2 * sz &&
                        x[0] <= 0.8 * sz)
                        v = spec.implant->hu;
                }
                p[(d * n + h) * n + w] = static_cast<float>(v);
            }
        }
    }
    return {out, {spec.spacing_mm, spec.spacing_mm, spec.spacing_mm}, ValueSpace::hounsfield};
}

fs::path sidecar_path(const fs::path& raw) { return fs::path(raw.string() + ".json"); }

void write_f32le(const fs::path& path, const torch::Tensor& t) {
    static_assert(std::endian::native == std::endian::little, "f32le I/O assumes a little-endian host");
    const auto c = t.to(torch::kFloat32).contiguous();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os.write(reinterpret_cast<const char*>(c.data_ptr<float>()), static_cast<std::streamsize>(c.numel() * sizeof(float)));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

torch::Tensor read_f32le(const fs::path& path, std::int64_t expected_count) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw NotFound("cannot open: " + path.string());
    const auto bytes = static_cast<std::int64_t>(is.tellg());
    if (bytes != expected_count * static_cast<std::int64_t>(sizeof(float)))
        throw FormatError(path.string() + ": expected " + std::to_string(expected_count) + " float32 values, found " +
                          std::to_string(bytes) + " bytes");
    is.seekg(0);
    auto t = torch::empty({expected_count}, torch::kFloat32);
    is.read(reinterpret_cast<char*>(t.data_ptr<float>()), bytes);
    if (!is) throw FormatError("short read: " + path.string());
    return t;
}

void save_volume(const CtVolume& vol, const fs::path& path) {
    vol.validate();
    const Shape3 s = vol.shape();
    write_f32le(path, vol.data);
    json side = {{"shape", {s.d, s.h, s.w}},
                 {"spacing_mm", {vol.spacing_mm[0], vol.spacing_mm[1], vol.spacing_mm[2]}},
                 {"value_space", to_string(vol.value_space)},
                 {"dtype", "f32le"}};
    std::ofstream os(sidecar_path(path));
    os << side.dump(2) << "\n";
}

CtVolume load_volume(const fs::path& path) {
    const fs::path side_path = sidecar_path(path);
    std::ifstream is(side_path);
    if (!is) throw NotFound("missing sidecar: " + side_path.string());
    CtVolume vol;
    std::array<std::int64_t, 3> shape{};
    try {
        const json side = json::parse(is);
        if (side.at("dtype").get<std::string>() != "f32le") throw FormatError("unsupported dtype in " + side_path.string());
        const auto& sh = side.at("shape");
        const auto& sp = side.at("spacing_mm");
        if (!sh.is_array() || sh.size() != 3 || !sp.is_array() || sp.size() != 3)
            throw FormatError("shape and spacing_mm must have three entries");
        for (int a = 0; a < 3; ++a) {
            shape[a] = sh.at(a).get<std::int64_t>();
            vol.spacing_mm[a] = sp.at(a).get<double>();
            if (shape[a] <= 0) throw FormatError("non-positive extent in " + side_path.string());
            if (!(vol.spacing_mm[a] > 0.0)) throw FormatError("non-positive spacing in " + side_path.string());
        }
        vol.value_space = value_space_from_string(side.at("value_space").get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError("malformed sidecar " + side_path.string() + ": " + e.what());
    }
    vol.data = read_f32le(path, shape[0] * shape[1] * shape[2]).reshape({shape[0], shape[1], shape[2]});
    try {
        vol.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return vol;
}

}  // namespace x2ct
