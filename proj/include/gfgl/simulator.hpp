#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfgl/array.hpp"
#include "gfgl/dataset.hpp"

namespace gfgl {

/// Axis-aligned rectangle [row0, row0 + height) x [col0, col0 + width), or a
/// disc of the given radius around (center_row, center_col), adding
/// `log_offset` to one molecule's log rate.
struct Region {
    enum class Shape { rect, disc };
    Shape shape = Shape::rect;
    std::size_t molecule = 0;
    double log_offset = 0.0;
    std::size_t row0 = 0, col0 = 0, height = 0, width = 0;
    double center_row = 0.0, center_col = 0.0, radius = 0.0;

    bool contains(std::size_t row, std::size_t col) const;
    bool operator==(const Region&) const = default;
};

struct SimSpec {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t num_molecules = 7;
    std::vector<double> base_log_rate;
    std::vector<Region> regions;
    /// Per-pixel total is Poisson(total_scale), or exactly total_scale when
    /// constant_total is set.
    double total_scale = 500.0;
    bool constant_total = false;
    std::vector<std::int64_t> lod;
    std::vector<std::string> names;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SimSpec&) const = default;
};

struct SimTruth {
    Matrix theta;        // M x D
    Matrix theta_tilde;  // each column sums to one
    std::vector<std::vector<std::size_t>> change_point_edges;
};

/// Built-in specs: "paper-like" (32x32, seven molecules, two of them
/// partially censored) and "two-region" (8x8, three molecules).
SimSpec sim_preset(std::string_view name, std::uint64_t seed = 0);
std::vector<std::string> sim_preset_names();

/// Fills theta, theta_tilde and change points for the spec's full grid.
SimTruth build_truth(const SimSpec& spec, const SpatialGraph& graph);

std::pair<CountDataset, SimTruth> simulate(const SimSpec& spec);

struct ChangePointReport {
    std::vector<std::size_t> per_molecule;
    /// M - M/D: the largest change-point count for which the rates stay identifiable.
    double bound = 0.0;
    bool within_bound = true;
};

ChangePointReport count_change_points(const SimTruth& truth);

nlohmann::json to_json(const SimSpec& spec);
SimSpec sim_spec_from_json(const nlohmann::json& j);

/// pixel_row,pixel_col,molecule,theta_tilde,theta in vertex order.
void save_truth(const SimTruth& truth, const CountDataset& ds, const std::filesystem::path& path);
/// Reads theta_tilde (and theta) back onto the dataset's graph.
SimTruth load_truth(const std::filesystem::path& path, const CountDataset& ds);

}  // namespace gfgl
