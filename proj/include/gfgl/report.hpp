#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gfgl/array.hpp"
#include "gfgl/spatial_graph.hpp"

namespace gfgl {

/// Perceptually uniform colormap (viridis), t clamped to [0, 1].
std::array<std::uint8_t, 3> viridis(double t);

/// 8-bit RGB image, row-major.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> fill);
    void set(std::size_t x, std::size_t y, std::array<std::uint8_t, 3> c);
};

void write_png(const RgbImage& img, const std::filesystem::path& path);

/// Heatmap of one field on the grid; masked pixels get the background colour.
RgbImage render_field(std::span<const double> values, const SpatialGraph& graph, double vmin, double vmax,
                      std::size_t cell_px);

/// Grid-shaped CSV (rows x cols), "NA" for masked pixels.
void write_grid_csv(std::span<const double> values, const SpatialGraph& graph, const std::filesystem::path& path);

struct NamedField {
    std::string name;  // e.g. "truth", "tic", "posterior_median"
    Matrix values;     // M x D
};

/// For each molecule and field: <field>_<molecule>.png and .csv; plus
/// panel.png with one row per field and one column per molecule. The colour
/// scale is shared across fields within a molecule. Returns written paths.
std::vector<std::filesystem::path> write_report(const std::vector<NamedField>& fields,
                                                const std::vector<std::string>& molecules, const SpatialGraph& graph,
                                                const std::filesystem::path& out_dir, std::size_t cell_px = 8);

}  // namespace gfgl
