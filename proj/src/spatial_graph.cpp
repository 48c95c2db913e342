#include "gfgl/spatial_graph.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <utility>

namespace gfgl {

SpatialGraph SpatialGraph::grid(std::size_t rows, std::size_t cols,
                                std::optional<std::vector<std::uint8_t>> mask) {
    if (rows == 0 || cols == 0) throw DataError("grid dimensions must be positive");
    SpatialGraph g;
    g.grid_rows_ = rows;
    g.grid_cols_ = cols;
    if (mask) {
        if (mask->size() != rows * cols) {
            throw DimensionError("mask has " + std::to_string(mask->size()) + " entries, grid has " +
                                 std::to_string(rows * cols));
        }
        g.mask_.resize(mask->size());
        std::transform(mask->begin(), mask->end(), g.mask_.begin(),
                       [](std::uint8_t m) { return static_cast<std::uint8_t>(m != 0); });
    } else {
        g.mask_.assign(rows * cols, 1);
    }

    g.pixel_to_vertex_.assign(rows * cols, -1);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (!g.mask_[r * cols + c]) continue;
            g.pixel_to_vertex_[r * cols + c] = static_cast<std::int64_t>(g.coords_.size());
            g.coords_.push_back({static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)});
        }
    }
    if (g.coords_.empty()) throw DataError("empty graph: mask has no active pixels");
    g.num_vertices_ = g.coords_.size();

    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::int64_t v = g.pixel_to_vertex_[r * cols + c];
            if (v < 0) continue;
            if (c + 1 < cols) {
                const std::int64_t right = g.pixel_to_vertex_[r * cols + c + 1];
                if (right >= 0) g.edges_.push_back({static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(right)});
            }
            if (r + 1 < rows) {
                const std::int64_t down = g.pixel_to_vertex_[(r + 1) * cols + c];
                if (down >= 0) g.edges_.push_back({static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(down)});
            }
        }
    }
    g.build_adjacency();
    return g;
}

SpatialGraph SpatialGraph::from_edges(std::size_t num_vertices, std::vector<Edge> edges) {
    if (num_vertices == 0) throw DataError("empty graph: no vertices");
    SpatialGraph g;
    g.num_vertices_ = num_vertices;
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (auto& e : edges) {
        if (e.lo == e.hi) throw DataError("self-loop on vertex " + std::to_string(e.lo));
        if (e.lo > e.hi) std::swap(e.lo, e.hi);
        if (e.hi >= num_vertices) throw DataError("edge endpoint out of range");
        if (!seen.insert({e.lo, e.hi}).second) throw DataError("duplicate edge");
    }
    g.edges_ = std::move(edges);
    g.build_adjacency();
    return g;
}

void SpatialGraph::build_adjacency() {
    std::vector<std::size_t> deg(num_vertices_, 0);
    for (const auto& e : edges_) {
        ++deg[e.lo];
        ++deg[e.hi];
    }
    offsets_.assign(num_vertices_ + 1, 0);
    for (std::size_t i = 0; i < num_vertices_; ++i) offsets_[i + 1] = offsets_[i] + deg[i];
    incidence_.resize(offsets_.back());
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t r = 0; r < edges_.size(); ++r) {
        const auto& e = edges_[r];
        incidence_[cursor[e.lo]++] = {static_cast<std::uint32_t>(r), e.hi};
        incidence_[cursor[e.hi]++] = {static_cast<std::uint32_t>(r), e.lo};
    }
}

bool SpatialGraph::has_holes() const {
    return std::any_of(mask_.begin(), mask_.end(), [](std::uint8_t m) { return m == 0; });
}

std::int64_t SpatialGraph::vertex_at(std::size_t row, std::size_t col) const {
    if (row >= grid_rows_ || col >= grid_cols_) return -1;
    return pixel_to_vertex_[row * grid_cols_ + col];
}

std::vector<double> SpatialGraph::apply_incidence(std::span<const double> v) const {
    require_same_length(v.size(), num_vertices_, "apply_incidence");
    std::vector<double> out(edges_.size());
    for (std::size_t r = 0; r < edges_.size(); ++r) out[r] = v[edges_[r].lo] - v[edges_[r].hi];
    return out;
}

std::vector<double> SpatialGraph::apply_incidence_transpose(std::span<const double> w) const {
    require_same_length(w.size(), edges_.size(), "apply_incidence_transpose");
    std::vector<double> out(num_vertices_, 0.0);
    for (std::size_t r = 0; r < edges_.size(); ++r) {
        out[edges_[r].lo] += w[r];
        out[edges_[r].hi] -= w[r];
    }
    return out;
}

std::vector<double> SpatialGraph::apply_abs_incidence_transpose(std::span<const double> w) const {
    require_same_length(w.size(), edges_.size(), "apply_abs_incidence_transpose");
    std::vector<double> out(num_vertices_, 0.0);
    for (std::size_t i = 0; i < num_vertices_; ++i) {
        double s = 0.0;
        for (const auto& inc : incident(i)) s += w[inc.edge];
        out[i] = s;
    }
    return out;
}

Matrix SpatialGraph::apply_incidence(const Matrix& v) const {
    if (v.rows() != num_vertices_) throw DimensionError("apply_incidence: row count != num_vertices");
    Matrix out(edges_.size(), v.cols());
    for (std::size_t r = 0; r < edges_.size(); ++r) {
        const auto lo = v.row(edges_[r].lo);
        const auto hi = v.row(edges_[r].hi);
        for (std::size_t d = 0; d < v.cols(); ++d) out(r, d) = lo[d] - hi[d];
    }
    return out;
}

bool SpatialGraph::operator==(const SpatialGraph& o) const {
    return num_vertices_ == o.num_vertices_ && edges_ == o.edges_ && grid_rows_ == o.grid_rows_ &&
           grid_cols_ == o.grid_cols_ && mask_ == o.mask_;
}

}  // namespace gfgl
