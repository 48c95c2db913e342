#include "gfgl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>

#include <png.h>

#include "gfgl/errors.hpp"

namespace gfgl {

namespace {

constexpr std::array<std::uint8_t, 3> kBackground{235, 235, 235};
constexpr std::array<std::uint8_t, 3> kGutter{255, 255, 255};

}  // namespace

std::array<std::uint8_t, 3> viridis(double t) {
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    // Degree-6 polynomial fit to the matplotlib table.
    constexpr double c[7][3] = {{0.2777273272234177, 0.005407344544966578, 0.3340998053353061},
                                {0.1050930431085774, 1.404613529898575, 1.384590162594685},
                                {-0.3308618287255563, 0.214847559468213, 0.09509516302823659},
                                {-4.634230498983486, -5.799100973351585, -19.33244095627987},
                                {6.228269936347081, 14.17993336680509, 56.69055260068105},
                                {4.776384997670288, -13.74514537774601, -65.35303263337234},
                                {-5.435455855934631, 4.645852612178535, 26.3124352495832}};
    std::array<std::uint8_t, 3> out{};
    for (int k = 0; k < 3; ++k) {
        double v = c[6][k];
        for (int p = 5; p >= 0; --p) v = v * t + c[p][k];
        out[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    return out;
}

RgbImage::RgbImage(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> fill)
    : width(w), height(h), pixels(w * h * 3) {
    for (std::size_t k = 0; k < w * h; ++k) std::copy(fill.begin(), fill.end(), pixels.begin() + 3 * k);
}

void RgbImage::set(std::size_t x, std::size_t y, std::array<std::uint8_t, 3> c) {
    std::copy(c.begin(), c.end(), pixels.begin() + 3 * (y * width + x));
}

void write_png(const RgbImage& img, const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw DataError("cannot write image " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + 3 * y * img.width));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

void paint(RgbImage& img, std::size_t x0, std::size_t y0, std::span<const double> values, const SpatialGraph& graph,
           double vmin, double vmax, std::size_t cell_px) {
    const double span = vmax > vmin ? vmax - vmin : 1.0;
    for (std::size_t r = 0; r < graph.grid_rows(); ++r) {
        for (std::size_t c = 0; c < graph.grid_cols(); ++c) {
            const auto v = graph.vertex_at(r, c);
            const auto colour = v < 0 ? kBackground : viridis((values[static_cast<std::size_t>(v)] - vmin) / span);
            for (std::size_t dy = 0; dy < cell_px; ++dy) {
                for (std::size_t dx = 0; dx < cell_px; ++dx) img.set(x0 + c * cell_px + dx, y0 + r * cell_px + dy, colour);
            }
        }
    }
}

std::vector<double> column(const Matrix& m, std::size_t d) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, d);
    return out;
}

}  // namespace

RgbImage render_field(std::span<const double> values, const SpatialGraph& graph, double vmin, double vmax,
                      std::size_t cell_px) {
    require_same_length(values.size(), graph.num_vertices(), "render_field");
    RgbImage img(graph.grid_cols() * cell_px, graph.grid_rows() * cell_px, kBackground);
    paint(img, 0, 0, values, graph, vmin, vmax, cell_px);
    return img;
}

void write_grid_csv(std::span<const double> values, const SpatialGraph& graph, const std::filesystem::path& path) {
    require_same_length(values.size(), graph.num_vertices(), "write_grid_csv");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write grid " + path.string());
    out << std::setprecision(17);
    for (std::size_t r = 0; r < graph.grid_rows(); ++r) {
        for (std::size_t c = 0; c < graph.grid_cols(); ++c) {
            if (c) out << ',';
            const auto v = graph.vertex_at(r, c);
            if (v < 0) {
                out << "NA";
            } else {
                out << values[static_cast<std::size_t>(v)];
            }
        }
        out << '\n';
    }
}

std::vector<std::filesystem::path> write_report(const std::vector<NamedField>& fields,
                                                const std::vector<std::string>& molecules, const SpatialGraph& graph,
                                                const std::filesystem::path& out_dir, std::size_t cell_px) {
    if (fields.empty()) throw DataError("report needs at least one field");
    for (const auto& f : fields) {
        if (f.values.rows() != graph.num_vertices() || f.values.cols() != molecules.size()) {
            throw DimensionError("report field " + f.name + " has the wrong shape");
        }
    }
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    const std::size_t w = graph.grid_cols() * cell_px;
    const std::size_t h = graph.grid_rows() * cell_px;
    const std::size_t gap = std::max<std::size_t>(cell_px, 4);
    RgbImage panel(molecules.size() * w + (molecules.size() + 1) * gap, fields.size() * h + (fields.size() + 1) * gap,
                   kGutter);
    for (std::size_t d = 0; d < molecules.size(); ++d) {
        double vmin = std::numeric_limits<double>::infinity();
        double vmax = -vmin;
        for (const auto& f : fields) {
            for (std::size_t i = 0; i < f.values.rows(); ++i) {
                vmin = std::min(vmin, f.values(i, d));
                vmax = std::max(vmax, f.values(i, d));
            }
        }
        for (std::size_t k = 0; k < fields.size(); ++k) {
            const auto values = column(fields[k].values, d);
            const auto stem = out_dir / (fields[k].name + "_" + molecules[d]);
            write_png(render_field(values, graph, vmin, vmax, cell_px), stem.string() + ".png");
            write_grid_csv(values, graph, stem.string() + ".csv");
            written.push_back(stem.string() + ".png");
            written.push_back(stem.string() + ".csv");
            paint(panel, gap + d * (w + gap), gap + k * (h + gap), values, graph, vmin, vmax, cell_px);
        }
    }
    write_png(panel, out_dir / "panel.png");
    written.push_back(out_dir / "panel.png");
    return written;
}

}  // namespace gfgl
