#include "gfgl/variational.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gfgl/likelihood.hpp"
#include "gfgl/rng.hpp"
#include "gfgl/special.hpp"

namespace gfgl {

namespace {

// Smallest standard-gamma draw we let through; keeps 1/nu finite.
constexpr double kGammaFloor = 1e-100;

enum StreamTag : std::uint64_t { kTagNormal = 1, kTagNu = 2, kTagLambda = 3 };

double gamma_from_noise(const GammaNoise& noise, std::size_t s, std::size_t r, std::size_t d, double shape) {
    const double v = noise.values(s, r, d);
    const double g = noise.kind == GammaNoise::Kind::quantile ? special::gamma_quantile(shape, v) : v;
    return std::max(g, kGammaFloor);
}

}  // namespace

void FamilyConfig::validate() const {
    if (samples_grad < 1) throw ConfigError("samples_grad must be >= 1");
    if (samples_cdf < 1) throw ConfigError("samples_cdf must be >= 1");
    if (family == Family::hierarchical && prior_kind != PriorKind::gamma_lasso) {
        throw ConfigError("the hierarchical family needs the gamma-lasso prior (it builds vertex precisions from nu)");
    }
    if (coupling == PenaltyCoupling::closed_form && laplace_form == LaplaceForm::scale) {
        throw ConfigError("closed-form coupling needs the rate form (E[1/nu] diverges for shape <= 1)");
    }
}

PenaltyCoupling FamilyConfig::resolved_coupling() const {
    if (coupling != PenaltyCoupling::automatic) return coupling;
    if (family == Family::mean_field && laplace_form == LaplaceForm::rate) return PenaltyCoupling::closed_form;
    return PenaltyCoupling::shared_draws;
}

FamilyConfig family_preset(std::string_view name) {
    FamilyConfig cfg;
    if (name == "hv-gfgl") {
        cfg.family = Family::hierarchical;
        cfg.prior_kind = PriorKind::gamma_lasso;
    } else if (name == "mf-gfgl") {
        cfg.family = Family::mean_field;
        cfg.prior_kind = PriorKind::gamma_lasso;
    } else if (name == "mf-gfl") {
        cfg.family = Family::mean_field;
        cfg.prior_kind = PriorKind::plain_lasso;
    } else {
        throw ConfigError("unknown family '" + std::string(name) + "' (expected hv-gfgl, mf-gfgl or mf-gfl)");
    }
    return cfg;
}

std::string family_name(const FamilyConfig& cfg) {
    if (cfg.family == Family::hierarchical) return "hv-gfgl";
    return cfg.prior_kind == PriorKind::gamma_lasso ? "mf-gfgl" : "mf-gfl";
}

VariationalParams::VariationalParams(std::size_t m, std::size_t r, std::size_t d)
    : mu(m, d), log_sigma(m, d), log_a(r, d), log_b(r, d), log_lam0(d), log_lam1(d) {}

void VariationalParams::visit(const std::function<void(std::string_view, std::span<double>)>& fn) {
    fn("mu", mu.data());
    fn("log_sigma", log_sigma.data());
    fn("log_a", log_a.data());
    fn("log_b", log_b.data());
    fn("log_lam0", log_lam0);
    fn("log_lam1", log_lam1);
}

void VariationalParams::visit(const std::function<void(std::string_view, std::span<const double>)>& fn) const {
    fn("mu", mu.data());
    fn("log_sigma", log_sigma.data());
    fn("log_a", log_a.data());
    fn("log_b", log_b.data());
    fn("log_lam0", log_lam0);
    fn("log_lam1", log_lam1);
}

VariationalParams VariationalParams::zeros_like() const {
    return VariationalParams(num_vertices(), num_edges(), num_molecules());
}

std::pair<VariationalParams, PriorConfig> init_params(const CountDataset& ds, const FamilyConfig& cfg,
                                                      InitDiagnostics* diag) {
    cfg.validate();
    const std::size_t m = ds.num_pixels();
    const std::size_t r_count = ds.graph().num_edges();
    const std::size_t d_count = ds.num_molecules();
    VariationalParams vp(m, r_count, d_count);
    PriorConfig prior;
    prior.kind = cfg.prior_kind;
    prior.tau.resize(d_count);
    prior.fixed_nu.resize(d_count);

    auto warn = [&](std::string msg) {
        if (diag) diag->warnings.push_back(std::move(msg));
    };

    for (std::size_t d = 0; d < d_count; ++d) {
        const auto& name = ds.molecule_names()[d];
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < m; ++i) {
            if (!ds.is_observed(i, d)) continue;
            sum += static_cast<double>(ds.count(i, d));
            ++n;
        }
        double mean = n > 0 ? sum / static_cast<double>(n) : 0.5 * static_cast<double>(ds.lod()[d]);
        if (n == 0) warn("molecule '" + name + "' is fully censored; using lod/2 as its mean");
        if (!(mean > 0.0)) {
            warn("molecule '" + name + "' has zero mean count; flooring the mean at " +
                 std::to_string(kInitSmoothing));
            mean = kInitSmoothing;
        }
        double var = 0.0;
        if (n >= 2) {
            for (std::size_t i = 0; i < m; ++i) {
                if (!ds.is_observed(i, d)) continue;
                const double dx = static_cast<double>(ds.count(i, d)) - mean;
                var += dx * dx;
            }
            var /= static_cast<double>(n - 1);
        }
        if (!(var > 0.0)) {
            warn("molecule '" + name + "' has no usable count variance; setting tau to max(mean, 1)");
            var = std::max(mean, 1.0);
        }
        prior.tau[d] = var;
        prior.fixed_nu[d] = 2.0 / mean;  // initial variational mean a/b
        vp.log_lam0[d] = 0.0;
        vp.log_lam1[d] = std::log(mean);
        for (std::size_t r = 0; r < r_count; ++r) {
            vp.log_a(r, d) = std::log(2.0);
            vp.log_b(r, d) = std::log(mean);
        }
    }

    const auto totals = compute_totals(ds);
    const double denom_pad = kInitSmoothing * static_cast<double>(d_count);
    for (std::size_t i = 0; i < m; ++i) {
        const double denom = static_cast<double>(totals[i]) + denom_pad;
        for (std::size_t d = 0; d < d_count; ++d) {
            const double num = ds.is_observed(i, d) ? static_cast<double>(ds.count(i, d)) + kInitSmoothing
                                                    : 0.5 * static_cast<double>(ds.lod()[d]);
            vp.mu(i, d) = std::log(num / denom);
            vp.log_sigma(i, d) = 0.0;
        }
    }
    return {std::move(vp), std::move(prior)};
}

void draw_base_noise(const VariationalParams& vp, std::size_t num_samples, NoiseKey key, Tensor3& normal,
                     GammaNoise& nu_noise, GammaNoise& lambda_noise) {
    const std::size_t m = vp.num_vertices();
    const std::size_t r_count = vp.num_edges();
    const std::size_t d_count = vp.num_molecules();
    normal = Tensor3(num_samples, m, d_count);
    nu_noise = GammaNoise{GammaNoise::Kind::standard, Tensor3(num_samples, r_count, d_count)};
    lambda_noise = GammaNoise{GammaNoise::Kind::standard, Tensor3(num_samples, 1, d_count)};

    for (std::size_t s = 0; s < num_samples; ++s) {
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < m; ++i) {
            Rng rng = Rng::stream(key.seed, {key.counter, kTagNormal, s, i});
            for (std::size_t d = 0; d < d_count; ++d) normal(s, i, d) = rng.normal();
        }
#pragma omp parallel for schedule(static)
        for (std::size_t r = 0; r < r_count; ++r) {
            Rng rng = Rng::stream(key.seed, {key.counter, kTagNu, s, r});
            for (std::size_t d = 0; d < d_count; ++d) {
                nu_noise.values(s, r, d) = rng.standard_gamma(std::exp(vp.log_a(r, d)));
            }
        }
        Rng rng = Rng::stream(key.seed, {key.counter, kTagLambda, s});
        for (std::size_t d = 0; d < d_count; ++d) {
            lambda_noise.values(s, 0, d) = rng.standard_gamma(std::exp(vp.log_lam0[d]));
        }
    }
}

DrawBatch materialize_draws(const VariationalParams& vp, const SpatialGraph& graph, Family family,
                            const Tensor3& normal, const GammaNoise& nu_noise, const GammaNoise& lambda_noise) {
    const std::size_t m = vp.num_vertices();
    const std::size_t r_count = vp.num_edges();
    const std::size_t d_count = vp.num_molecules();
    const std::size_t s_count = normal.dim0();
    if (graph.num_vertices() != m || graph.num_edges() != r_count) {
        throw DimensionError("variational parameters do not match the graph");
    }
    if (normal.dim1() != m || normal.dim2() != d_count || nu_noise.values.dim0() != s_count ||
        nu_noise.values.dim1() != r_count || nu_noise.values.dim2() != d_count ||
        lambda_noise.values.dim0() != s_count || lambda_noise.values.dim2() != d_count) {
        throw DimensionError("base noise shape does not match the variational parameters");
    }

    DrawBatch batch;
    batch.normal = normal;
    batch.lambda = Matrix(s_count, d_count);
    batch.lambda_std = Matrix(s_count, d_count);
    batch.nu = Tensor3(s_count, r_count, d_count);
    batch.nu_std = Tensor3(s_count, r_count, d_count);
    batch.gamma = Tensor3(s_count, m, d_count);
    batch.log_theta = Tensor3(s_count, m, d_count);

    for (std::size_t s = 0; s < s_count; ++s) {
        for (std::size_t d = 0; d < d_count; ++d) {
            const double g = gamma_from_noise(lambda_noise, s, 0, d, std::exp(vp.log_lam0[d]));
            batch.lambda_std(s, d) = g;
            batch.lambda(s, d) = g * std::exp(-vp.log_lam1[d]);
        }
#pragma omp parallel for schedule(static)
        for (std::size_t r = 0; r < r_count; ++r) {
            for (std::size_t d = 0; d < d_count; ++d) {
                const double g = gamma_from_noise(nu_noise, s, r, d, std::exp(vp.log_a(r, d)));
                batch.nu_std(s, r, d) = g;
                batch.nu(s, r, d) = g * std::exp(-vp.log_b(r, d));
            }
        }
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < m; ++i) {
            const auto inc = graph.incident(i);
            for (std::size_t d = 0; d < d_count; ++d) {
                double gam = 0.0;
                for (const auto& e : inc) gam += 1.0 / batch.nu(s, e.edge, d);
                batch.gamma(s, i, d) = gam;
                const double z = normal(s, i, d);
                if (family == Family::hierarchical && !inc.empty()) {
                    batch.log_theta(s, i, d) = vp.mu(i, d) + z / std::sqrt(gam);
                } else {
                    batch.log_theta(s, i, d) = vp.mu(i, d) + std::exp(vp.log_sigma(i, d)) * z;
                }
            }
        }
    }
    return batch;
}

DrawBatch sample_hierarchical(const VariationalParams& vp, const SpatialGraph& graph, const FamilyConfig& cfg,
                              NoiseKey key) {
    Tensor3 normal;
    GammaNoise nu_noise;
    GammaNoise lambda_noise;
    draw_base_noise(vp, cfg.samples_grad, key, normal, nu_noise, lambda_noise);
    return materialize_draws(vp, graph, Family::hierarchical, normal, nu_noise, lambda_noise);
}

DrawBatch sample_meanfield(const VariationalParams& vp, const SpatialGraph& graph, const FamilyConfig& cfg,
                           NoiseKey key) {
    Tensor3 normal;
    GammaNoise nu_noise;
    GammaNoise lambda_noise;
    draw_base_noise(vp, cfg.samples_grad, key, normal, nu_noise, lambda_noise);
    return materialize_draws(vp, graph, Family::mean_field, normal, nu_noise, lambda_noise);
}

GammaNoise to_quantile_noise(const GammaNoise& noise, std::span<const double> log_shape_flat, std::size_t rows) {
    if (noise.kind == GammaNoise::Kind::quantile) return noise;
    const auto& v = noise.values;
    if (v.dim1() != rows || rows * v.dim2() != log_shape_flat.size()) {
        throw DimensionError("to_quantile_noise: shape mismatch");
    }
    GammaNoise out{GammaNoise::Kind::quantile, Tensor3(v.dim0(), v.dim1(), v.dim2())};
    for (std::size_t s = 0; s < v.dim0(); ++s) {
        for (std::size_t r = 0; r < v.dim1(); ++r) {
            for (std::size_t d = 0; d < v.dim2(); ++d) {
                out.values(s, r, d) = special::gamma_cdf(std::exp(log_shape_flat[r * v.dim2() + d]), v(s, r, d));
            }
        }
    }
    return out;
}

std::size_t PosteriorSummary::level_index(double level) const {
    for (std::size_t q = 0; q < levels.size(); ++q) {
        if (std::abs(levels[q] - level) < 1e-12) return q;
    }
    throw DomainError("posterior summary has no quantile at level " + std::to_string(level));
}

Matrix PosteriorSummary::at_level(double level) const {
    const std::size_t q = level_index(level);
    Matrix out(values.dim1(), values.dim2());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t d = 0; d < out.cols(); ++d) out(i, d) = values(q, i, d);
    }
    return out;
}

PosteriorSummary posterior_summary(const VariationalParams& vp, const SpatialGraph& graph, const FamilyConfig& cfg,
                                   std::size_t n_draws, const std::vector<double>& quantiles, std::uint64_t seed) {
    if (n_draws < 100) throw DomainError("posterior_summary: need at least 100 draws");
    if (quantiles.empty()) throw DomainError("posterior_summary: no quantile levels");
    for (double q : quantiles) {
        if (!(q > 0.0 && q < 1.0)) throw DomainError("posterior_summary: quantile levels must lie in (0, 1)");
    }
    const std::size_t m = vp.num_vertices();
    const std::size_t r_count = vp.num_edges();
    const std::size_t d_count = vp.num_molecules();
    if (graph.num_vertices() != m || graph.num_edges() != r_count) {
        throw DimensionError("variational parameters do not match the graph");
    }

    PosteriorSummary out;
    out.levels = quantiles;
    out.values = Array3D<double>(quantiles.size(), m, d_count);

#pragma omp parallel for schedule(dynamic)
    for (std::size_t d = 0; d < d_count; ++d) {
        std::vector<double> draws(n_draws * m);
        std::vector<double> inv_nu(r_count);
        std::vector<double> log_theta(m);
        for (std::size_t t = 0; t < n_draws; ++t) {
            Rng rng = Rng::stream(seed, {d, t});
            if (cfg.family == Family::hierarchical) {
                for (std::size_t r = 0; r < r_count; ++r) {
                    const double g = std::max(rng.standard_gamma(std::exp(vp.log_a(r, d))), kGammaFloor);
                    inv_nu[r] = std::exp(vp.log_b(r, d)) / g;
                }
            }
            for (std::size_t i = 0; i < m; ++i) {
                const double z = rng.normal();
                const auto inc = graph.incident(i);
                if (cfg.family == Family::hierarchical && !inc.empty()) {
                    double gam = 0.0;
                    for (const auto& e : inc) gam += inv_nu[e.edge];
                    log_theta[i] = vp.mu(i, d) + z / std::sqrt(gam);
                } else {
                    log_theta[i] = vp.mu(i, d) + std::exp(vp.log_sigma(i, d)) * z;
                }
            }
            const auto rel = softmax_rates(log_theta);
            for (std::size_t i = 0; i < m; ++i) draws[i * n_draws + t] = rel[i];
        }
        for (std::size_t i = 0; i < m; ++i) {
            auto first = draws.begin() + static_cast<std::ptrdiff_t>(i * n_draws);
            std::sort(first, first + static_cast<std::ptrdiff_t>(n_draws));
            for (std::size_t q = 0; q < quantiles.size(); ++q) {
                const double h = (static_cast<double>(n_draws) - 1.0) * quantiles[q];
                const auto lo = static_cast<std::size_t>(std::floor(h));
                const std::size_t hi = std::min(lo + 1, n_draws - 1);
                const double x_lo = first[static_cast<std::ptrdiff_t>(lo)];
                const double x_hi = first[static_cast<std::ptrdiff_t>(hi)];
                out.values(q, i, d) = x_lo + (h - static_cast<double>(lo)) * (x_hi - x_lo);
            }
        }
    }
    return out;
}

}  // namespace gfgl
