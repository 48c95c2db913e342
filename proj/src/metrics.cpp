#include "gfgl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gfgl/errors.hpp"

namespace gfgl {

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": fields have different shapes");
    }
}

}  // namespace

Matrix tic_normalize(const CountDataset& ds) {
    const std::size_t m = ds.num_pixels();
    const std::size_t d_count = ds.num_molecules();
    Matrix q(m, d_count, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double total = 0.0;
        for (std::size_t d = 0; d < d_count; ++d) {
            if (ds.observed()(i, d)) total += static_cast<double>(ds.counts()(i, d));
        }
        for (std::size_t d = 0; d < d_count; ++d) {
            if (ds.observed()(i, d)) q(i, d) = static_cast<double>(ds.counts()(i, d)) / total;
        }
    }
    for (std::size_t d = 0; d < d_count; ++d) {
        double col = 0.0;
        for (std::size_t i = 0; i < m; ++i) col += q(i, d);
        // A molecule that is censored everywhere has no information; spread it uniformly.
        for (std::size_t i = 0; i < m; ++i) q(i, d) = col > 0.0 ? q(i, d) / col : 1.0 / static_cast<double>(m);
    }
    return q;
}

PerMolecule rmse_relative(const Matrix& a, const Matrix& b, RmseScale scale) {
    require_same_shape(a, b, "rmse_relative");
    const std::size_t m = a.rows();
    const std::size_t d_count = a.cols();
    if (m == 0) throw DimensionError("rmse_relative: empty field");
    PerMolecule out;
    double pooled = 0.0;
    for (std::size_t d = 0; d < d_count; ++d) {
        double unit = 1.0;
        if (scale == RmseScale::standardized) {
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += b(i, d);
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) var += (b(i, d) - mean) * (b(i, d) - mean);
            const double sd = std::sqrt(var / static_cast<double>(m));
            unit = sd > 1e-12 * std::abs(mean) ? sd : std::abs(mean);
            if (unit == 0.0) unit = 1.0;
        }
        double ss = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double e = (a(i, d) - b(i, d)) / unit;
            ss += e * e;
        }
        pooled += ss;
        out.per_molecule.push_back(std::sqrt(ss / static_cast<double>(m)));
    }
    out.overall = std::sqrt(pooled / static_cast<double>(m * d_count));
    return out;
}

PerMolecule ci_coverage(const PosteriorSummary& summary, const Matrix& truth, double level) {
    const std::size_t lo = summary.level_index(0.5 * (1.0 - level));
    const std::size_t hi = summary.level_index(0.5 * (1.0 + level));
    const auto& v = summary.values;
    if (v.dim1() != truth.rows() || v.dim2() != truth.cols()) throw DimensionError("ci_coverage: shape mismatch");
    PerMolecule out;
    std::size_t hits_all = 0;
    for (std::size_t d = 0; d < truth.cols(); ++d) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < truth.rows(); ++i) {
            if (truth(i, d) >= v(lo, i, d) && truth(i, d) <= v(hi, i, d)) ++hits;
        }
        hits_all += hits;
        out.per_molecule.push_back(static_cast<double>(hits) / static_cast<double>(truth.rows()));
    }
    out.overall = static_cast<double>(hits_all) / static_cast<double>(truth.rows() * truth.cols());
    return out;
}

SsimResult ssim(std::span<const double> a, std::span<const double> b, const SpatialGraph& graph) {
    const std::size_t m = graph.num_vertices();
    require_same_length(a.size(), m, "ssim");
    require_same_length(b.size(), m, "ssim");
    double lo = a[0], hi = a[0];
    for (std::size_t i = 0; i < m; ++i) {
        lo = std::min({lo, a[i], b[i]});
        hi = std::max({hi, a[i], b[i]});
    }
    double range = hi - lo;
    if (range == 0.0) range = 1.0;
    const double c1 = (kSsimK1 * range) * (kSsimK1 * range);
    const double c2 = (kSsimK2 * range) * (kSsimK2 * range);

    auto local = [&](const std::vector<std::pair<std::size_t, double>>& win) {
        double wsum = 0.0, ma = 0.0, mb = 0.0;
        for (const auto& [k, w] : win) {
            wsum += w;
            ma += w * a[k];
            mb += w * b[k];
        }
        ma /= wsum;
        mb /= wsum;
        double va = 0.0, vb = 0.0, cab = 0.0;
        for (const auto& [k, w] : win) {
            va += w * (a[k] - ma) * (a[k] - ma);
            vb += w * (b[k] - mb) * (b[k] - mb);
            cab += w * (a[k] - ma) * (b[k] - mb);
        }
        va /= wsum;
        vb /= wsum;
        cab /= wsum;
        return ((2.0 * (ma * mb) + c1) * (2.0 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    };

    const std::size_t rows = graph.grid_rows();
    const std::size_t cols = graph.grid_cols();
    const std::size_t size = 2 * kSsimRadius + 1;
    SsimResult res;
    if (rows < size || cols < size) {
        std::vector<std::pair<std::size_t, double>> win;
        for (std::size_t i = 0; i < m; ++i) win.emplace_back(i, 1.0);
        res.value = local(win);
        res.global_fallback = true;
        return res;
    }

    double kernel[2 * kSsimRadius + 1][2 * kSsimRadius + 1];
    for (int dr = -kSsimRadius; dr <= kSsimRadius; ++dr) {
        for (int dc = -kSsimRadius; dc <= kSsimRadius; ++dc) {
            kernel[dr + kSsimRadius][dc + kSsimRadius] =
                std::exp(-(dr * dr + dc * dc) / (2.0 * kSsimSigma * kSsimSigma));
        }
    }
    double total = 0.0;
    std::size_t count = 0;
    std::vector<std::pair<std::size_t, double>> win;
    for (std::size_t r = kSsimRadius; r + kSsimRadius < rows; ++r) {
        for (std::size_t c = kSsimRadius; c + kSsimRadius < cols; ++c) {
            if (graph.vertex_at(r, c) < 0) continue;
            win.clear();
            for (int dr = -kSsimRadius; dr <= kSsimRadius; ++dr) {
                for (int dc = -kSsimRadius; dc <= kSsimRadius; ++dc) {
                    const auto v = graph.vertex_at(r + dr, c + dc);
                    if (v >= 0) win.emplace_back(static_cast<std::size_t>(v), kernel[dr + kSsimRadius][dc + kSsimRadius]);
                }
            }
            total += local(win);
            ++count;
        }
    }
    if (count == 0) {
        win.clear();
        for (std::size_t i = 0; i < m; ++i) win.emplace_back(i, 1.0);
        res.value = local(win);
        res.global_fallback = true;
        return res;
    }
    res.value = total / static_cast<double>(count);
    return res;
}

std::vector<SsimResult> ssim_columns(const Matrix& a, const Matrix& b, const SpatialGraph& graph) {
    require_same_shape(a, b, "ssim_columns");
    std::vector<SsimResult> out(a.cols());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t d = 0; d < a.cols(); ++d) {
        std::vector<double> ca(a.rows()), cb(a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i) {
            ca[i] = a(i, d);
            cb[i] = b(i, d);
        }
        out[d] = ssim(ca, cb, graph);
    }
    return out;
}

SsimQuantileReport ssim_quantile_report(const Matrix& reference, const Matrix& estimate, const SpatialGraph& graph,
                                        const std::vector<double>& levels) {
    SsimQuantileReport rep;
    rep.per_molecule = ssim_columns(reference, estimate, graph);
    rep.levels = levels;
    std::vector<double> values;
    for (const auto& r : rep.per_molecule) {
        values.push_back(r.value);
        rep.any_fallback = rep.any_fallback || r.global_fallback;
    }
    rep.quantiles = sample_quantiles(values, levels);
    return rep;
}

std::string format_ssim_report(const SsimQuantileReport& report) {
    std::string out = "SSIM between TIC and model posterior median (quantiles over molecules)\n";
    for (std::size_t k = 0; k < report.levels.size(); ++k) {
        char level[32], line[64];
        std::snprintf(level, sizeof level, "%g", report.levels[k]);
        std::snprintf(line, sizeof line, "  q%-6s%.4f\n", level, report.quantiles[k]);
        out += line;
    }
    return out;
}

std::vector<double> sample_quantiles(std::vector<double> values, const std::vector<double>& levels) {
    if (values.empty()) throw DomainError("quantiles of an empty sample");
    std::sort(values.begin(), values.end());
    std::vector<double> out;
    const double n1 = static_cast<double>(values.size() - 1);
    for (double q : levels) {
        if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0, 1]");
        const double h = q * n1;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, values.size() - 1);
        out.push_back(values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]));
    }
    return out;
}

AblationRow score_fit(const std::string& method, const VariationalParams& vp, const FamilyConfig& cfg,
                      const CountDataset& ds, const Matrix& truth, std::size_t draws, std::uint64_t seed,
                      RmseScale scale) {
    const auto summary = posterior_summary(vp, ds.graph(), cfg, draws, kDefaultQuantiles, seed);
    AblationRow row;
    row.method = method;
    row.rmse = rmse_relative(summary.median(), truth, scale);
    row.has_coverage = true;
    row.coverage90 = ci_coverage(summary, truth, 0.9);
    row.coverage50 = ci_coverage(summary, truth, 0.5);
    return row;
}

AblationReport run_ablation_suite(const CountDataset& ds, const SimTruth& truth,
                                  const std::vector<FamilyConfig>& configs, const AblationOptions& opts) {
    AblationReport rep;
    rep.molecules = ds.molecule_names();
    rep.scale = opts.scale;
    AblationRow tic;
    tic.method = "TIC";
    tic.rmse = rmse_relative(tic_normalize(ds), truth.theta_tilde, opts.scale);
    rep.rows.push_back(tic);
    for (const auto& cfg : configs) {
        const auto res = fit(ds, cfg, opts.train);
        rep.rows.push_back(score_fit(family_name(cfg), res.params, cfg, ds, truth.theta_tilde, opts.posterior_draws,
                                     opts.train.seed, opts.scale));
    }
    return rep;
}

namespace {

std::string fixed(double v, int prec) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

std::string aligned(const std::vector<std::vector<std::string>>& cells) {
    std::vector<std::size_t> width;
    for (const auto& row : cells) {
        width.resize(std::max(width.size(), row.size()), 0);
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream os;
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c == 0) {
                os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
            } else {
                os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
            }
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace

std::string format_ablation_text(const AblationReport& report) {
    std::vector<std::vector<std::string>> rmse{{"Method"}};
    for (const auto& m : report.molecules) rmse[0].push_back(m);
    rmse[0].push_back("Overall");
    std::vector<std::vector<std::string>> cov = rmse;
    for (const auto& row : report.rows) {
        std::vector<std::string> r{row.method};
        for (double v : row.rmse.per_molecule) r.push_back(fixed(v, 4));
        r.push_back(fixed(row.rmse.overall, 4));
        rmse.push_back(std::move(r));
        if (!row.has_coverage) continue;
        std::vector<std::string> c{row.method};
        for (std::size_t d = 0; d < row.coverage90.per_molecule.size(); ++d) {
            c.push_back(fixed(row.coverage90.per_molecule[d], 2) + " (" + fixed(row.coverage50.per_molecule[d], 2) +
                        ")");
        }
        c.push_back(fixed(row.coverage90.overall, 2) + " (" + fixed(row.coverage50.overall, 2) + ")");
        cov.push_back(std::move(c));
    }
    std::ostringstream os;
    os << "RMSE of relative rates (" << (report.scale == RmseScale::raw ? "raw" : "standardized") << ")\n"
       << aligned(rmse) << "\n90% credible interval coverage (50% in parentheses)\n"
       << aligned(cov);
    return os.str();
}

void write_ablation_csv(const AblationReport& report, const std::filesystem::path& rmse_path,
                        const std::filesystem::path& coverage_path) {
    std::ofstream r(rmse_path);
    std::ofstream c(coverage_path);
    if (!r || !c) throw DataError("cannot write ablation report");
    r << "method";
    c << "method,level";
    for (const auto& m : report.molecules) {
        r << ',' << m;
        c << ',' << m;
    }
    r << ",overall\n" << std::setprecision(10);
    c << ",overall\n" << std::setprecision(10);
    for (const auto& row : report.rows) {
        r << row.method;
        for (double v : row.rmse.per_molecule) r << ',' << v;
        r << ',' << row.rmse.overall << '\n';
        if (!row.has_coverage) continue;
        for (const auto& [level, cov] : {std::pair{0.9, &row.coverage90}, std::pair{0.5, &row.coverage50}}) {
            c << row.method << ',' << level;
            for (double v : cov->per_molecule) c << ',' << v;
            c << ',' << cov->overall << '\n';
        }
    }
}

}  // namespace gfgl
