#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "gfgl/errors.hpp"
#include "gfgl/simulator.hpp"

using namespace gfgl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("gfgl_sim_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

SimSpec flat_spec(std::size_t rows, std::size_t cols, std::size_t d) {
    SimSpec s;
    s.rows = rows;
    s.cols = cols;
    s.num_molecules = d;
    s.base_log_rate.assign(d, 0.0);
    s.lod.assign(d, 0);
    s.total_scale = 200;
    s.seed = 5;
    return s;
}

Region rect(std::size_t mol, double off, std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) {
    Region r;
    r.molecule = mol;
    r.log_offset = off;
    r.row0 = r0;
    r.col0 = c0;
    r.height = h;
    r.width = w;
    return r;
}

}  // namespace

TEST(Simulator, EqualRatesPassChiSquareGoodnessOfFit) {
    auto spec = flat_spec(10, 10, 4);
    spec.constant_total = true;
    const auto [ds, truth] = simulate(spec);
    // Sum of per-pixel Pearson statistics: chi-square with M (D - 1) dof.
    double stat = 0.0;
    const double expected = spec.total_scale / 4.0;
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        std::int64_t n = 0;
        for (std::size_t d = 0; d < 4; ++d) {
            n += ds.count(i, d);
            stat += std::pow(static_cast<double>(ds.count(i, d)) - expected, 2) / expected;
        }
        ASSERT_EQ(n, 200);
    }
    const boost::math::chi_squared dist(static_cast<double>(ds.num_pixels() * 3));
    const double p = boost::math::cdf(boost::math::complement(dist, stat));
    EXPECT_GT(p, 0.01) << "statistic " << stat;
}

TEST(Simulator, PoissonTotalsHaveTheRightMean) {
    auto spec = flat_spec(20, 20, 2);
    const auto ds = simulate(spec).first;
    double sum = 0.0;
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) sum += static_cast<double>(ds.count(i, 0) + ds.count(i, 1));
    const double mean = sum / 400.0;
    EXPECT_NEAR(mean, 200.0, 4.0 * std::sqrt(200.0 / 400.0));
}

TEST(Simulator, DiscOffsetScalesRatesInside) {
    auto spec = flat_spec(12, 12, 2);
    Region disc;
    disc.shape = Region::Shape::disc;
    disc.molecule = 1;
    disc.log_offset = std::log(4.0);
    disc.center_row = 5.5;
    disc.center_col = 5.5;
    disc.radius = 3.0;
    spec.regions = {disc};
    const auto [ds, truth] = simulate(spec);
    const auto coords = ds.graph().coordinates();
    double inside = 0.0, outside = 0.0;
    std::size_t n_in = 0;
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        if (disc.contains(coords[i].row, coords[i].col)) {
            inside = truth.theta(i, 1);
            ++n_in;
        } else {
            outside = truth.theta(i, 1);
        }
        EXPECT_EQ(truth.theta(i, 0), 1.0);
    }
    EXPECT_GT(n_in, 20u);
    EXPECT_NEAR(inside / outside, 4.0, 1e-12);
}

TEST(Simulator, ThetaTildeColumnsSumToOne) {
    const auto truth = simulate(sim_preset("paper-like", 1)).second;
    for (std::size_t d = 0; d < truth.theta_tilde.cols(); ++d) {
        double s = 0.0;
        for (std::size_t i = 0; i < truth.theta_tilde.rows(); ++i) s += truth.theta_tilde(i, d);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Simulator, PaperLikePresetHasPartialCensoring) {
    const auto [ds, truth] = simulate(sim_preset("paper-like", 1));
    EXPECT_EQ(ds.num_pixels(), 1024u);
    EXPECT_EQ(ds.num_molecules(), 7u);
    std::size_t censored_molecules = 0;
    for (std::size_t d = 0; d < 7; ++d) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < ds.num_pixels(); ++i) c += ds.is_observed(i, d) ? 0 : 1;
        if (c > 0) {
            ++censored_molecules;
            EXPECT_LT(c, ds.num_pixels() / 2);
        }
    }
    EXPECT_EQ(censored_molecules, 2u);
    EXPECT_TRUE(count_change_points(truth).within_bound);
}

TEST(Simulator, HugeLodCensorsWholeMoleculeAndStillLoads) {
    TempDir dir;
    auto spec = flat_spec(4, 4, 3);
    spec.lod = {0, 0, 1000000};
    const auto ds = simulate(spec).first;
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) EXPECT_FALSE(ds.is_observed(i, 2));
    save_dataset(ds, dir.path / "c.csv", dir.path / "m.txt");
    EXPECT_EQ(load_dataset(dir.path / "c.csv", dir.path / "m.txt"), ds);
}

TEST(Simulator, TooFewCountsForTheLimitsFails) {
    auto spec = flat_spec(3, 3, 2);
    spec.lod = {1000, 1000};
    EXPECT_THROW(simulate(spec), DataError);
}

TEST(Simulator, RectangleChangePointsFollowThePerimeter) {
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 5}, {4, 2}}) {
        auto spec = flat_spec(10, 10, 2);
        spec.regions = {rect(0, 1.0, 2, 3, h, w)};
        const auto truth = simulate(spec).second;
        const auto rep = count_change_points(truth);
        EXPECT_EQ(rep.per_molecule[0], 2 * (h + w));
        EXPECT_EQ(rep.per_molecule[1], 0u);
    }
    // Touching the border removes those sides.
    auto spec = flat_spec(10, 10, 2);
    spec.regions = {rect(1, 1.0, 0, 0, 5, 10)};
    EXPECT_EQ(count_change_points(simulate(spec).second).per_molecule[1], 10u);
}

TEST(Simulator, ChangePointBoundIsReported) {
    auto spec = flat_spec(4, 4, 2);
    spec.regions = {rect(0, 1.0, 1, 1, 2, 2)};
    auto rep = count_change_points(simulate(spec).second);
    EXPECT_DOUBLE_EQ(rep.bound, 8.0);
    EXPECT_EQ(rep.per_molecule[0], 8u);
    EXPECT_TRUE(rep.within_bound);

    spec.regions = {rect(0, 1.0, 1, 1, 1, 1), rect(0, 2.0, 2, 2, 1, 1), rect(0, 1.0, 0, 3, 1, 1)};
    rep = count_change_points(simulate(spec).second);
    EXPECT_EQ(rep.per_molecule[0], 10u);
    EXPECT_FALSE(rep.within_bound);
}

TEST(Simulator, ProportionsConvergeForLargeTotals) {
    auto spec = flat_spec(3, 3, 3);
    spec.base_log_rate = {0.0, std::log(2.0), std::log(5.0)};
    spec.total_scale = 1e6;
    spec.constant_total = true;
    const auto [ds, truth] = simulate(spec);
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        for (std::size_t d = 0; d < 3; ++d) {
            const double p = truth.theta(i, d) / 8.0;
            EXPECT_NEAR(static_cast<double>(ds.count(i, d)) / 1e6, p, 0.01 * p);
        }
    }
}

TEST(Simulator, SameSeedSameBytesDifferentSeedDifferentData) {
    TempDir dir;
    const auto spec = sim_preset("paper-like", 3);
    for (const char* tag : {"a", "b"}) {
        const auto [ds, truth] = simulate(spec);
        save_dataset(ds, dir.path / (std::string(tag) + ".csv"), dir.path / (std::string(tag) + ".meta"));
        save_truth(truth, ds, dir.path / (std::string(tag) + "_truth.csv"));
    }
    EXPECT_EQ(slurp(dir.path / "a.csv"), slurp(dir.path / "b.csv"));
    EXPECT_EQ(slurp(dir.path / "a.meta"), slurp(dir.path / "b.meta"));
    EXPECT_EQ(slurp(dir.path / "a_truth.csv"), slurp(dir.path / "b_truth.csv"));
    EXPECT_NE(simulate(sim_preset("paper-like", 4)).first, simulate(spec).first);
}

TEST(Simulator, TruthRoundTrip) {
    TempDir dir;
    const auto [ds, truth] = simulate(sim_preset("two-region", 1));
    save_truth(truth, ds, dir.path / "t.csv");
    const auto back = load_truth(dir.path / "t.csv", ds);
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        for (std::size_t d = 0; d < ds.num_molecules(); ++d) {
            EXPECT_NEAR(back.theta_tilde(i, d), truth.theta_tilde(i, d), 1e-15 * truth.theta_tilde(i, d));
        }
    }
    EXPECT_EQ(back.change_point_edges, truth.change_point_edges);
}

TEST(Simulator, SpecJsonRoundTrip) {
    for (const auto& name : sim_preset_names()) {
        const auto spec = sim_preset(name, 9);
        EXPECT_EQ(sim_spec_from_json(to_json(spec)), spec) << name;
    }
    EXPECT_THROW(sim_preset("nope"), ConfigError);
}

TEST(Simulator, InvalidSpecsAreRejected) {
    auto base = flat_spec(4, 4, 2);
    auto s = base;
    s.rows = 0;
    EXPECT_THROW(simulate(s), ConfigError);
    s = base;
    s.lod = {0};
    EXPECT_THROW(simulate(s), ConfigError);
    s = base;
    s.lod = {0, -1};
    EXPECT_THROW(simulate(s), ConfigError);
    s = base;
    s.total_scale = 0;
    EXPECT_THROW(simulate(s), ConfigError);
    s = base;
    s.regions = {rect(2, 1.0, 0, 0, 1, 1)};
    EXPECT_THROW(simulate(s), ConfigError);
    s = base;
    s.regions = {rect(0, 1.0, 3, 3, 2, 2)};
    EXPECT_THROW(simulate(s), ConfigError);
    s = base;
    s.base_log_rate = {0.0, INFINITY};
    EXPECT_THROW(simulate(s), ConfigError);
}
