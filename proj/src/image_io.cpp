#include "x2ct/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "x2ct/errors.hpp"

namespace x2ct {

void write_png(const std::filesystem::path& path, const torch::Tensor& image, DisplayWindow window) {
    if (image.dim() != 2) throw InvalidArgument("write_png expects a 2D image");
    if (!(window.hi > window.lo)) throw InvalidArgument("display window must have hi > lo");
    const auto img = image.to(torch::kFloat64).contiguous();
    const auto rows = static_cast<png_uint_32>(img.size(0));
    const auto cols = static_cast<png_uint_32>(img.size(1));
    const double* src = img.data_ptr<double>();

    std::vector<png_byte> pixels(static_cast<std::size_t>(rows) * cols);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double t = (src[i] - window.lo) / (window.hi - window.lo);
        pixels[i] = static_cast<png_byte>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, cols, rows, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 r = 0; r < rows; ++r) png_write_row(png, pixels.data() + static_cast<std::size_t>(r) * cols);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

torch::Tensor hstack_panels(const std::vector<torch::Tensor>& panels, std::int64_t gap, double fill) {
    if (panels.empty()) throw InvalidArgument("hstack_panels needs at least one panel");
    std::int64_t rows = 0, cols = 0;
    for (const auto& p : panels) {
        rows = std::max(rows, p.size(0));
        cols += p.size(1);
    }
    cols += gap * static_cast<std::int64_t>(panels.size() - 1);
    auto out = torch::full({rows, cols}, fill, torch::kFloat64);
    std::int64_t c0 = 0;
    using torch::indexing::Slice;
    for (const auto& p : panels) {
        out.index_put_({Slice(0, p.size(0)), Slice(c0, c0 + p.size(1))}, p.to(torch::kFloat64));
        c0 += p.size(1) + gap;
    }
    return out;
}

torch::Tensor vstack_panels(const std::vector<torch::Tensor>& panels, std::int64_t gap, double fill) {
    std::vector<torch::Tensor> transposed;
    for (const auto& p : panels) transposed.push_back(p.t());
    return hstack_panels(transposed, gap, fill).t().contiguous();
}

}  // namespace x2ct
