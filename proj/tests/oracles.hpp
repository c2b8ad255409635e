#pragma once

// Independent reference implementations used only by the tests. Everything
// here is written with plain loops over accessors, never with the library's
// tensor paths.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <torch/torch.h>

namespace oracle {

// Bilinear lookup of channel c of plane {C, R, K} at normalized (row, col),
// align_corners=false, border clamp.
inline double bilinear(const torch::Tensor& plane, std::int64_t c, double row, double col) {
    auto p = plane.to(torch::kFloat64).contiguous();
    auto a = p.accessor<double, 3>();
    const auto R = p.size(1), K = p.size(2);
    auto to_index = [](double x, std::int64_t n) {
        double i = ((x + 1.0) * static_cast<double>(n) - 1.0) / 2.0;
        return std::clamp(i, 0.0, static_cast<double>(n - 1));
    };
    const double r = to_index(row, R), k = to_index(col, K);
    const auto r0 = static_cast<std::int64_t>(std::floor(r));
    const auto k0 = static_cast<std::int64_t>(std::floor(k));
    const auto r1 = std::min(r0 + 1, R - 1), k1 = std::min(k0 + 1, K - 1);
    const double fr = r - static_cast<double>(r0), fk = k - static_cast<double>(k0);
    return (1 - fr) * (1 - fk) * a[c][r0][k0] + (1 - fr) * fk * a[c][r0][k1] + fr * (1 - fk) * a[c][r1][k0] +
           fr * fk * a[c][r1][k1];
}

// Tri-plane feature of channel c at voxel (d, h, w) of a D x H x W grid;
// planes are {C, H, W} (uv), {C, H, D} (uw), {C, W, D} (vw).
inline double triplane_voxel(const torch::Tensor& uv, const torch::Tensor& uw, const torch::Tensor& vw,
                             std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w, std::int64_t D,
                             std::int64_t H, std::int64_t W) {
    const double u = (2.0 * h + 1.0) / H - 1.0;
    const double v = (2.0 * w + 1.0) / W - 1.0;
    const double z = (2.0 * d + 1.0) / D - 1.0;
    return bilinear(uv, c, u, v) + bilinear(uw, c, u, z) + bilinear(vw, c, v, z);
}

inline std::vector<double> gaussian(int width, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(width));
    double sum = 0.0;
    for (int i = 0; i < width; ++i) {
        const double x = i - (width - 1) / 2.0;
        g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    return g;
}

// Direct windowed SSIM over every valid window position of a 2D image.
inline double ssim_2d(const torch::Tensor& a, const torch::Tensor& b, double range = 2.0, int win = 11,
                      double sigma = 1.5) {
    auto x = a.to(torch::kFloat64).contiguous();
    auto y = b.to(torch::kFloat64).contiguous();
    auto xa = x.accessor<double, 2>(), ya = y.accessor<double, 2>();
    const auto g = gaussian(win, sigma);
    const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i + win <= x.size(0); ++i) {
        for (std::int64_t j = 0; j + win <= x.size(1); ++j) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int p = 0; p < win; ++p) {
                for (int q = 0; q < win; ++q) {
                    const double wgt = g[static_cast<std::size_t>(p)] * g[static_cast<std::size_t>(q)];
                    const double xv = xa[i + p][j + q], yv = ya[i + p][j + q];
                    mx += wgt * xv;
                    my += wgt * yv;
                    sxx += wgt * xv * xv;
                    syy += wgt * yv * yv;
                    sxy += wgt * xv * yv;
                }
            }
            sxx -= mx * mx;
            syy -= my * my;
            sxy -= mx * my;
            total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// Same formula on a 3D volume.
inline double ssim_3d(const torch::Tensor& a, const torch::Tensor& b, double range = 2.0, int win = 11,
                      double sigma = 1.5) {
    auto x = a.to(torch::kFloat64).contiguous();
    auto y = b.to(torch::kFloat64).contiguous();
    auto xa = x.accessor<double, 3>(), ya = y.accessor<double, 3>();
    const auto g = gaussian(win, sigma);
    const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i + win <= x.size(0); ++i)
        for (std::int64_t j = 0; j + win <= x.size(1); ++j)
            for (std::int64_t k = 0; k + win <= x.size(2); ++k) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int p = 0; p < win; ++p)
                    for (int q = 0; q < win; ++q)
                        for (int r = 0; r < win; ++r) {
                            const double wgt = g[static_cast<std::size_t>(p)] * g[static_cast<std::size_t>(q)] *
                                               g[static_cast<std::size_t>(r)];
                            const double xv = xa[i + p][j + q][k + r], yv = ya[i + p][j + q][k + r];
                            mx += wgt * xv;
                            my += wgt * yv;
                            sxx += wgt * xv * xv;
                            syy += wgt * yv * yv;
                            sxy += wgt * xv * yv;
                        }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

// Length of the segment from p to q that lies inside the box [0, ext).
inline double box_chord(std::array<double, 3> p, std::array<double, 3> q, std::array<double, 3> ext) {
    double lo = 0.0, hi = 1.0;
    for (int a = 0; a < 3; ++a) {
        const double d = q[a] - p[a];
        if (std::abs(d) < 1e-300) {
            if (p[a] < 0.0 || p[a] > ext[a]) return 0.0;
            continue;
        }
        double s0 = -p[a] / d, s1 = (ext[a] - p[a]) / d;
        if (s0 > s1) std::swap(s0, s1);
        lo = std::max(lo, s0);
        hi = std::min(hi, s1);
    }
    if (hi <= lo) return 0.0;
    double len = 0.0;
    for (int a = 0; a < 3; ++a) len += (q[a] - p[a]) * (q[a] - p[a]);
    return (hi - lo) * std::sqrt(len);
}

// Mean projections by explicit summation over a {D, H, W} volume.
inline std::array<torch::Tensor, 3> mean_projections(const torch::Tensor& vol) {
    auto v = vol.to(torch::kFloat64).contiguous();
    auto a = v.accessor<double, 3>();
    const auto D = v.size(0), H = v.size(1), W = v.size(2);
    auto A = torch::zeros({H, W}, torch::kFloat64), C = torch::zeros({H, D}, torch::kFloat64),
         S = torch::zeros({W, D}, torch::kFloat64);
    auto pa = A.accessor<double, 2>(), pc = C.accessor<double, 2>(), ps = S.accessor<double, 2>();
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w) {
                pa[h][w] += a[d][h][w] / D;
                pc[h][d] += a[d][h][w] / W;
                ps[w][d] += a[d][h][w] / H;
            }
    return {A, C, S};
}

}  // namespace oracle
