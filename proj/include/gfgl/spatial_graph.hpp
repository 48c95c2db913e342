#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gfgl/array.hpp"

namespace gfgl {

/// Undirected edge stored in canonical order: `lo < hi`.
/// The incidence operator puts +1 on `lo` and -1 on `hi`.
struct Edge {
    std::uint32_t lo;
    std::uint32_t hi;
    bool operator==(const Edge&) const = default;
};

struct Incidence {
    std::uint32_t edge;
    std::uint32_t neighbor;
};

struct GridCoord {
    std::int32_t row;
    std::int32_t col;
    bool operator==(const GridCoord&) const = default;
};

/// Pixel-grid graph with 4-neighbour connectivity and sparse incidence algebra.
///
/// Vertices are the masked-in pixels in row-major order. Immutable after
/// construction.
class SpatialGraph {
  public:
    SpatialGraph() = default;

    /// Full or masked rows x cols grid. `mask`, when given, is row-major with
    /// rows*cols entries; nonzero means the pixel is present.
    static SpatialGraph grid(std::size_t rows, std::size_t cols,
                             std::optional<std::vector<std::uint8_t>> mask = std::nullopt);

    /// Arbitrary simple graph; used by tests. Edges are canonicalized.
    static SpatialGraph from_edges(std::size_t num_vertices, std::vector<Edge> edges);

    std::size_t num_vertices() const { return num_vertices_; }
    std::size_t num_edges() const { return edges_.size(); }
    std::span<const Edge> edges() const { return edges_; }

    /// Incident edges and neighbours of vertex i (xi(i)).
    std::span<const Incidence> incident(std::size_t i) const {
        return {incidence_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }
    std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

    /// Grid geometry; zero for graphs built from edge lists.
    std::size_t grid_rows() const { return grid_rows_; }
    std::size_t grid_cols() const { return grid_cols_; }
    const std::vector<std::uint8_t>& mask() const { return mask_; }
    bool has_holes() const;
    std::span<const GridCoord> coordinates() const { return coords_; }

    /// Vertex index at (row, col), or -1 when the pixel is masked out.
    std::int64_t vertex_at(std::size_t row, std::size_t col) const;

    /// H v: out[r] = v[lo] - v[hi].
    std::vector<double> apply_incidence(std::span<const double> vertex_values) const;
    /// H^T w.
    std::vector<double> apply_incidence_transpose(std::span<const double> edge_values) const;
    /// (H+)^T w: out[i] = sum of w over edges incident to i.
    std::vector<double> apply_abs_incidence_transpose(std::span<const double> edge_values) const;

    /// Column-wise H applied to an M x D matrix, giving R x D.
    Matrix apply_incidence(const Matrix& vertex_values) const;

    bool operator==(const SpatialGraph& other) const;

  private:
    void build_adjacency();

    std::size_t num_vertices_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::size_t> offsets_{0};
    std::vector<Incidence> incidence_;
    std::size_t grid_rows_ = 0;
    std::size_t grid_cols_ = 0;
    std::vector<std::uint8_t> mask_;
    std::vector<std::int64_t> pixel_to_vertex_;
    std::vector<GridCoord> coords_;
};

}  // namespace gfgl
