#include <gtest/gtest.h>

#include <set>

#include "gfgl/errors.hpp"
#include "gfgl/rng.hpp"
#include "gfgl/spatial_graph.hpp"

using namespace gfgl;

namespace {

SpatialGraph path3() { return SpatialGraph::from_edges(3, {{0, 1}, {1, 2}}); }

}  // namespace

TEST(SpatialGraph, GridSizes) {
    EXPECT_EQ(SpatialGraph::grid(1, 1).num_vertices(), 1u);
    EXPECT_EQ(SpatialGraph::grid(1, 1).num_edges(), 0u);
    EXPECT_EQ(SpatialGraph::grid(2, 2).num_edges(), 4u);
    EXPECT_EQ(SpatialGraph::grid(3, 3).num_vertices(), 9u);
    EXPECT_EQ(SpatialGraph::grid(3, 3).num_edges(), 12u);
    for (std::size_t r = 1; r < 7; ++r) {
        for (std::size_t c = 1; c < 7; ++c) {
            const auto g = SpatialGraph::grid(r, c);
            EXPECT_EQ(g.num_vertices(), r * c);
            EXPECT_EQ(g.num_edges(), r * (c - 1) + c * (r - 1));
        }
    }
}

TEST(SpatialGraph, EdgesCanonicalAndAdjacencyConsistent) {
    std::vector<std::uint8_t> mask(5 * 6, 1);
    mask[7] = mask[8] = mask[20] = 0;
    const auto g = SpatialGraph::grid(5, 6, mask);
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (std::size_t r = 0; r < g.num_edges(); ++r) {
        const auto e = g.edges()[r];
        EXPECT_LT(e.lo, e.hi);
        EXPECT_LT(e.hi, g.num_vertices());
        EXPECT_TRUE(seen.insert({e.lo, e.hi}).second);
    }
    std::vector<std::size_t> appearances(g.num_edges(), 0);
    for (std::size_t i = 0; i < g.num_vertices(); ++i) {
        for (const auto& inc : g.incident(i)) {
            const auto e = g.edges()[inc.edge];
            EXPECT_TRUE(e.lo == i || e.hi == i);
            EXPECT_EQ(inc.neighbor, e.lo == i ? e.hi : e.lo);
            ++appearances[inc.edge];
        }
    }
    for (auto a : appearances) EXPECT_EQ(a, 2u);
}

TEST(SpatialGraph, IncidenceExamples) {
    const auto p = path3();
    EXPECT_EQ(p.apply_incidence(std::vector<double>{5, 5, 5}), (std::vector<double>{0, 0}));
    EXPECT_EQ(p.apply_incidence(std::vector<double>{1, 2, 4}), (std::vector<double>{-1, -2}));
    EXPECT_EQ(p.apply_abs_incidence_transpose(std::vector<double>{0.5, 0.25}), (std::vector<double>{0.5, 0.75, 0.25}));
    EXPECT_EQ(p.apply_abs_incidence_transpose(std::vector<double>{0, 0}), (std::vector<double>{0, 0, 0}));

    const auto g = SpatialGraph::grid(2, 2);
    const auto h = g.apply_incidence(std::vector<double>{1, 0, 0, 0});
    int nonzero = 0;
    for (double v : h) {
        if (v != 0.0) {
            ++nonzero;
            EXPECT_EQ(std::abs(v), 1.0);
        }
    }
    EXPECT_EQ(nonzero, 2);
    EXPECT_EQ(g.apply_abs_incidence_transpose(std::vector<double>{1, 1, 1, 1}), (std::vector<double>{2, 2, 2, 2}));
}

TEST(SpatialGraph, AdjointIdentityAndDegrees) {
    const auto g = SpatialGraph::grid(7, 5);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(g.num_vertices()), w(g.num_edges());
        for (auto& x : v) x = rng.normal();
        for (auto& x : w) x = rng.normal();
        const auto hv = g.apply_incidence(v);
        const auto htw = g.apply_incidence_transpose(w);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t r = 0; r < w.size(); ++r) lhs += hv[r] * w[r];
        for (std::size_t i = 0; i < v.size(); ++i) rhs += v[i] * htw[i];
        EXPECT_NEAR(lhs, rhs, 1e-10 * (1.0 + std::abs(lhs)));
    }
    const auto deg = g.apply_abs_incidence_transpose(std::vector<double>(g.num_edges(), 1.0));
    for (std::size_t i = 0; i < g.num_vertices(); ++i) EXPECT_EQ(deg[i], static_cast<double>(g.degree(i)));
    EXPECT_EQ(g.apply_incidence(std::vector<double>(g.num_vertices(), 3.7)), std::vector<double>(g.num_edges(), 0.0));
}

TEST(SpatialGraph, Deterministic) {
    std::vector<std::uint8_t> mask(16, 1);
    mask[5] = 0;
    EXPECT_TRUE(SpatialGraph::grid(4, 4, mask) == SpatialGraph::grid(4, 4, mask));
}

TEST(SpatialGraph, MaskedGrid) {
    std::vector<std::uint8_t> mask{1, 0, 1, 1};
    const auto g = SpatialGraph::grid(2, 2, mask);
    EXPECT_EQ(g.num_vertices(), 3u);
    EXPECT_EQ(g.num_edges(), 2u);
    EXPECT_TRUE(g.has_holes());
    EXPECT_EQ(g.vertex_at(0, 1), -1);
    EXPECT_THROW(SpatialGraph::grid(2, 2, std::vector<std::uint8_t>(4, 0)), DataError);
}

TEST(SpatialGraph, FromEdgesRejectsBadInput) {
    EXPECT_THROW(SpatialGraph::from_edges(3, {{1, 1}}), DataError);
    EXPECT_THROW(SpatialGraph::from_edges(3, {{0, 1}, {1, 0}}), DataError);
    EXPECT_THROW(SpatialGraph::from_edges(3, {{0, 3}}), DataError);
    const auto g = SpatialGraph::from_edges(3, {{2, 1}});
    EXPECT_EQ(g.edges()[0].lo, 1u);
    EXPECT_EQ(g.edges()[0].hi, 2u);
}

TEST(SpatialGraph, DimensionMismatch) {
    EXPECT_THROW(path3().apply_incidence(std::vector<double>{1, 2}), DimensionError);
}
