#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gfgl/array.hpp"
#include "gfgl/spatial_graph.hpp"

namespace gfgl {

/// M x D count matrix with left-censoring flags and per-molecule limits of
/// detection. Censored entries are stored as 0 and never read as counts.
class CountDataset {
  public:
    CountDataset() = default;

    /// Validates and takes ownership. Throws DataError on any violated invariant.
    CountDataset(SpatialGraph graph, Array2D<std::int64_t> counts, Array2D<std::uint8_t> observed,
                 std::vector<std::int64_t> lod, std::vector<std::string> molecule_names);

    std::size_t num_pixels() const { return counts_.rows(); }
    std::size_t num_molecules() const { return counts_.cols(); }

    const SpatialGraph& graph() const { return graph_; }
    const Array2D<std::int64_t>& counts() const { return counts_; }
    const Array2D<std::uint8_t>& observed() const { return observed_; }
    const std::vector<std::int64_t>& lod() const { return lod_; }
    const std::vector<std::string>& molecule_names() const { return names_; }

    std::int64_t count(std::size_t i, std::size_t d) const { return counts_(i, d); }
    bool is_observed(std::size_t i, std::size_t d) const { return observed_(i, d) != 0; }
    bool has_censoring(std::size_t i) const;
    std::size_t num_censored() const;

    bool operator==(const CountDataset&) const = default;

  private:
    SpatialGraph graph_;
    Array2D<std::int64_t> counts_;
    Array2D<std::uint8_t> observed_;
    std::vector<std::int64_t> lod_;
    std::vector<std::string> names_;
};

/// N_i: sum of observed counts in each pixel. Censored entries never contribute.
std::vector<std::int64_t> compute_totals(const CountDataset& ds);

/// Reads a counts CSV (`pixel_row,pixel_col,<names...>`, "NA" for censored)
/// and its key-value meta file.
CountDataset load_dataset(const std::filesystem::path& counts_path,
                          const std::filesystem::path& meta_path);

void save_dataset(const CountDataset& ds, const std::filesystem::path& counts_path,
                  const std::filesystem::path& meta_path);

/// Run-length mask encoding used by the meta file, e.g. "1*10,0*3,1*20".
std::string encode_mask(const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> decode_mask(const std::string& text);

}  // namespace gfgl
