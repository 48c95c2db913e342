#include <gtest/gtest.h>
#include <omp.h>

#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <numbers>

#include "gfgl/elbo.hpp"
#include "gfgl/errors.hpp"
#include "gfgl/rng.hpp"

using namespace gfgl;

namespace {

CountDataset make_dataset(std::size_t rows, std::size_t cols, std::size_t d, std::uint64_t seed,
                          const std::vector<std::pair<std::size_t, std::size_t>>& censored = {}) {
    auto g = SpatialGraph::grid(rows, cols);
    const std::size_t m = g.num_vertices();
    Array2D<std::int64_t> counts(m, d);
    Array2D<std::uint8_t> observed(m, d, 1);
    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < d; ++k) counts(i, k) = 3 + static_cast<std::int64_t>(rng() % 25);
    }
    std::vector<std::int64_t> lod(d, 0);
    for (const auto& [i, k] : censored) {
        observed(i, k) = 0;
        counts(i, k) = 0;
        lod[k] = 6;
    }
    std::vector<std::string> names;
    for (std::size_t k = 0; k < d; ++k) names.push_back("m" + std::to_string(k));
    return CountDataset(std::move(g), counts, observed, lod, names);
}

void perturb(VariationalParams& vp, std::uint64_t seed, double scale) {
    Rng rng(seed);
    vp.visit([&](std::string_view, std::span<double> v) {
        for (auto& x : v) x += scale * (rng.uniform() - 0.5);
    });
}

double lse(const std::vector<double>& v) {
    double m = -INFINITY;
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// Straight-line ELBO for one configuration, written without the library's
// sampling or likelihood code. Gamma noise must be the standard kind.
double oracle_elbo(const CountDataset& ds, const PriorConfig& prior, const FamilyConfig& cfg,
                   const VariationalParams& vp, const BaseNoise& noise) {
    const auto& g = ds.graph();
    const std::size_t m = g.num_vertices(), r_count = g.num_edges(), dd = ds.num_molecules();
    const std::size_t S = noise.normal.dim0();
    const bool scale_form = cfg.laplace_form == LaplaceForm::scale;
    const double half_log_2pie = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    double total = 0.0;

    // Multinomial coefficients over observed entries.
    for (std::size_t i = 0; i < m; ++i) {
        double n = 0.0;
        for (std::size_t k = 0; k < dd; ++k) {
            if (ds.is_observed(i, k)) {
                n += static_cast<double>(ds.count(i, k));
                total -= std::lgamma(static_cast<double>(ds.count(i, k)) + 1.0);
            }
        }
        total += std::lgamma(n + 1.0);
    }

    for (std::size_t s = 0; s < S; ++s) {
        double per_sample = 0.0;
        // nu and log theta.
        std::vector<double> nu(r_count * dd);
        for (std::size_t r = 0; r < r_count; ++r) {
            for (std::size_t k = 0; k < dd; ++k) {
                nu[r * dd + k] = noise.nu.values(s, r, k) / std::exp(vp.log_b(r, k));
            }
        }
        std::vector<double> lt(m * dd), gam(m * dd, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t k = 0; k < dd; ++k) {
                double sd;
                bool use_sigma = cfg.family == Family::mean_field;
                if (!use_sigma) {
                    double gsum = 0.0;
                    int deg = 0;
                    for (std::size_t r = 0; r < r_count; ++r) {
                        if (g.edges()[r].lo == i || g.edges()[r].hi == i) {
                            gsum += 1.0 / nu[r * dd + k];
                            ++deg;
                        }
                    }
                    if (deg == 0) {
                        use_sigma = true;
                    } else {
                        gam[i * dd + k] = gsum;
                    }
                }
                sd = use_sigma ? std::exp(vp.log_sigma(i, k)) : 1.0 / std::sqrt(gam[i * dd + k]);
                lt[i * dd + k] = vp.mu(i, k) + sd * noise.normal(s, i, k);
                per_sample += use_sigma ? half_log_2pie + vp.log_sigma(i, k)
                                        : half_log_2pie - 0.5 * std::log(gam[i * dd + k]);
            }
        }
        // Likelihood.
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> all, obs;
            double n = 0.0;
            for (std::size_t k = 0; k < dd; ++k) {
                all.push_back(lt[i * dd + k]);
                if (ds.is_observed(i, k)) {
                    obs.push_back(lt[i * dd + k]);
                    n += static_cast<double>(ds.count(i, k));
                }
            }
            const double l_all = lse(all), l_obs = lse(obs);
            for (std::size_t k = 0; k < dd; ++k) {
                if (ds.is_observed(i, k)) per_sample += static_cast<double>(ds.count(i, k)) * (lt[i * dd + k] - l_obs);
            }
            const auto& draws = noise.censor[s * m + i];
            if (draws.num_draws == 0) continue;
            std::vector<double> lw;
            for (std::size_t t = 0; t < draws.num_inside(); ++t) {
                double w = n * (l_obs - l_all) - draws.log_kernel[t];
                std::size_t j = 0;
                for (std::size_t k = 0; k < dd; ++k) {
                    if (!ds.is_observed(i, k)) {
                        w += static_cast<double>(draws.counts[t * draws.width + j++]) * (lt[i * dd + k] - l_all);
                    }
                }
                lw.push_back(w);
            }
            per_sample += lse(lw) - std::log(static_cast<double>(draws.num_draws));
        }
        // Edge prior with one nu draw per theta draw.
        for (std::size_t r = 0; r < r_count; ++r) {
            for (std::size_t k = 0; k < dd; ++k) {
                const double delta = std::abs(lt[g.edges()[r].lo * dd + k] - lt[g.edges()[r].hi * dd + k]);
                if (prior.kind == PriorKind::plain_lasso) {
                    const double v = prior.fixed_nu[k];
                    per_sample += scale_form ? -std::log(2.0 * v) - delta / v : std::log(v / 2.0) - v * delta;
                } else {
                    const double a = std::exp(vp.log_a(r, k)), b = std::exp(vp.log_b(r, k));
                    const double e_log_nu = boost::math::digamma(a) - std::log(b);
                    per_sample += (scale_form ? -e_log_nu : e_log_nu) - std::log(2.0);
                    per_sample -= scale_form ? delta / nu[r * dd + k] : delta * nu[r * dd + k];
                }
            }
        }
        total += per_sample / static_cast<double>(S);
    }
    if (prior.kind == PriorKind::gamma_lasso) {
        for (std::size_t k = 0; k < dd; ++k) {
            const double l0 = std::exp(vp.log_lam0[k]), l1 = std::exp(vp.log_lam1[k]);
            const double e_lam = l0 / l1, e_log_lam = boost::math::digamma(l0) - std::log(l1);
            for (std::size_t r = 0; r < r_count; ++r) {
                const double a = std::exp(vp.log_a(r, k)), b = std::exp(vp.log_b(r, k));
                total -= (a - 1.0) * boost::math::digamma(a) - std::lgamma(a) + std::log(b) - a - e_log_lam +
                         e_lam * a / b;
            }
            const double tau = prior.tau[k];
            total -= (l0 - 1.0) * boost::math::digamma(l0) - std::lgamma(l0) + std::log(l1) - l0 - std::log(tau) +
                     tau * l0 / l1;
        }
    }
    return total;
}

struct FdResult {
    double worst = 0.0;
    std::string where;
};

FdResult finite_difference_check(const ElboProblem& pb, const VariationalParams& vp, BaseNoise noise) {
    noise.nu = to_quantile_noise(noise.nu, vp.log_a.data(), vp.log_a.rows());
    noise.lambda = to_quantile_noise(noise.lambda, vp.log_lam0, 1);
    VariationalParams grad;
    pb.evaluate(vp, noise, &grad);
    std::vector<std::vector<double>> analytic;
    grad.visit([&](std::string_view, std::span<const double> v) { analytic.emplace_back(v.begin(), v.end()); });
    VariationalParams x = vp;
    FdResult res;
    std::size_t t = 0;
    x.visit([&](std::string_view name, std::span<double> v) {
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double h = 1e-5, x0 = v[k];
            v[k] = x0 + h;
            const double fp = pb.evaluate(x, noise).total;
            v[k] = x0 - h;
            const double fm = pb.evaluate(x, noise).total;
            v[k] = x0;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[t][k];
            const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
            if (err > res.worst) {
                res.worst = err;
                res.where = std::string(name) + "[" + std::to_string(k) + "]";
            }
        }
        ++t;
    });
    return res;
}

}  // namespace

TEST(Elbo, MatchesStraightLineOracle) {
    const auto ds = make_dataset(2, 2, 2, 3, {{1, 1}});
    for (const char* preset : {"hv-gfgl", "mf-gfgl", "mf-gfl"}) {
        for (auto form : {LaplaceForm::scale, LaplaceForm::rate}) {
            auto cfg = family_preset(preset);
            cfg.laplace_form = form;
            cfg.coupling = PenaltyCoupling::shared_draws;
            cfg.samples_grad = 3;
            auto [vp, prior] = init_params(ds, cfg);
            perturb(vp, 5, 0.3);
            const ElboProblem pb(ds, prior, cfg);
            const auto noise = pb.draw_noise(vp, NoiseKey{11, 2});
            const auto got = pb.evaluate(vp, noise);
            EXPECT_NEAR(got.total, oracle_elbo(ds, prior, cfg, vp, noise), 1e-10) << preset;
        }
    }
}

TEST(Elbo, TotalDecomposesExactly) {
    const auto ds = make_dataset(3, 2, 3, 8, {{0, 2}, {4, 1}});
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    const ElboProblem pb(ds, prior, cfg);
    const auto e = elbo_estimate(pb, vp, NoiseKey{1, 1});
    EXPECT_EQ(e.total, e.loglik_obs + e.loglik_censor + e.prior_alpha + e.entropy_theta - e.kl_nu - e.kl_lambda);
}

TEST(Elbo, NoCensoringGivesZeroCensorTerm) {
    const auto ds = make_dataset(3, 3, 2, 2);
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    const ElboProblem pb(ds, prior, cfg);
    EXPECT_EQ(elbo_estimate(pb, vp, NoiseKey{1, 1}).loglik_censor, 0.0);
}

TEST(Elbo, SinglePixelSingleMolecule) {
    const auto ds = make_dataset(1, 1, 1, 2);
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    const ElboProblem pb(ds, prior, cfg);
    const auto e = elbo_estimate(pb, vp, NoiseKey{1, 1});
    EXPECT_EQ(e.loglik_obs, 0.0);
    EXPECT_EQ(e.loglik_censor, 0.0);
    EXPECT_EQ(e.prior_alpha, 0.0);  // no edges
    EXPECT_EQ(e.kl_nu, 0.0);
}

TEST(Elbo, SameNoiseSameValue) {
    const auto ds = make_dataset(3, 3, 2, 4, {{2, 0}});
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    const ElboProblem pb(ds, prior, cfg);
    const auto noise = pb.draw_noise(vp, NoiseKey{3, 3});
    EXPECT_EQ(elbo_estimate_crn(pb, vp, noise).total, elbo_estimate_crn(pb, vp, noise).total);
    // The stochastic estimate at the same key uses the same noise.
    EXPECT_EQ(elbo_estimate(pb, vp, NoiseKey{3, 3}).total, elbo_estimate_crn(pb, vp, noise).total);
}

TEST(Elbo, SmoothUnderCommonRandomNumbers) {
    const auto ds = make_dataset(3, 3, 2, 4, {{2, 0}});
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    const ElboProblem pb(ds, prior, cfg);
    auto noise = pb.draw_noise(vp, NoiseKey{3, 3});
    noise.nu = to_quantile_noise(noise.nu, vp.log_a.data(), vp.log_a.rows());
    noise.lambda = to_quantile_noise(noise.lambda, vp.log_lam0, 1);
    double prev = elbo_estimate_crn(pb, vp, noise).total;
    double prev_step = 0.0;
    for (int k = 1; k <= 20; ++k) {
        auto x = vp;
        x.mu(4, 1) += 1e-4 * k;
        x.log_a(3, 0) += 1e-4 * k;
        const double v = elbo_estimate_crn(pb, x, noise).total;
        const double step = v - prev;
        if (k > 1) {
            EXPECT_LT(std::abs(step - prev_step), 1e-3 * (std::abs(step) + 1e-9) + 1e-6);
        }
        prev_step = step;
        prev = v;
    }
}

TEST(Elbo, NoiseShapeMismatchThrows) {
    const auto ds = make_dataset(3, 3, 2, 4);
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    const ElboProblem pb(ds, prior, cfg);
    auto noise = pb.draw_noise(vp, NoiseKey{3, 3});
    noise.censor.pop_back();
    EXPECT_THROW(pb.evaluate(vp, noise), DimensionError);
    const auto other = make_dataset(2, 3, 2, 4);
    const auto [vp2, prior2] = init_params(other, cfg);
    EXPECT_THROW(elbo_estimate(pb, vp2, NoiseKey{1, 1}), DimensionError);
}

TEST(Elbo, GradientMatchesFiniteDifferences) {
    // 3x3 grid, two molecules, eight samples, common random numbers.
    const auto ds = make_dataset(3, 3, 2, 6, {{1, 0}, {5, 1}, {8, 1}});
    for (const char* preset : {"hv-gfgl", "mf-gfgl", "mf-gfl"}) {
        for (auto form : {LaplaceForm::scale, LaplaceForm::rate}) {
            for (auto coupling : {PenaltyCoupling::automatic, PenaltyCoupling::cross_product}) {
                for (auto kl : {KlNuExpectation::closed_form, KlNuExpectation::sampled}) {
                    auto cfg = family_preset(preset);
                    cfg.laplace_form = form;
                    cfg.coupling = coupling;
                    cfg.kl_nu = kl;
                    cfg.samples_grad = 8;
                    auto [vp, prior] = init_params(ds, cfg);
                    perturb(vp, 12, 0.4);
                    const ElboProblem pb(ds, prior, cfg);
                    const auto res = finite_difference_check(pb, vp, pb.draw_noise(vp, NoiseKey{7, 1}));
                    EXPECT_LT(res.worst, 1e-4) << preset << " form " << static_cast<int>(form) << " coupling "
                                               << static_cast<int>(coupling) << " at " << res.where;
                }
            }
        }
    }
}

TEST(Elbo, MeanFieldShapeGradientsIgnoreTheData) {
    // In the mean-field family nu enters only through the prior and the KL
    // terms, so the nu gradients must not depend on the counts.
    const auto a = make_dataset(3, 3, 2, 1);
    const auto b = make_dataset(3, 3, 2, 99);
    const auto cfg = family_preset("mf-gfgl");
    auto [vp, prior] = init_params(a, cfg);
    perturb(vp, 3, 0.2);
    const ElboProblem pa(a, prior, cfg), pb(b, prior, cfg);
    auto noise = pa.draw_noise(vp, NoiseKey{5, 5});
    VariationalParams ga, gb;
    pa.evaluate(vp, noise, &ga);
    pb.evaluate(vp, noise, &gb);
    EXPECT_TRUE(ga.log_a == gb.log_a);
    EXPECT_TRUE(ga.log_b == gb.log_b);
    EXPECT_TRUE(ga.log_lam0 == gb.log_lam0);
    EXPECT_TRUE(ga.mu != gb.mu);
}

TEST(Elbo, LikelihoodInvariantToPerPixelShift) {
    const auto ds = make_dataset(3, 3, 3, 6, {{1, 0}, {5, 2}});
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    const ElboProblem pb(ds, prior, cfg);
    const auto noise = pb.draw_noise(vp, NoiseKey{2, 2});
    auto shifted = vp;
    Rng rng(4);
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        const double c = 3.0 * rng.normal();
        for (std::size_t d = 0; d < 3; ++d) shifted.mu(i, d) += c;
    }
    const auto a = pb.evaluate(vp, noise);
    const auto b = pb.evaluate(shifted, noise);
    EXPECT_NEAR(a.loglik_obs, b.loglik_obs, 1e-9);
    EXPECT_NEAR(a.loglik_censor, b.loglik_censor, 1e-9);

}

TEST(Elbo, DeterministicAcrossThreadCounts) {
    const auto ds = make_dataset(4, 4, 3, 6, {{1, 0}, {5, 2}, {9, 2}});
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    const ElboProblem pb(ds, prior, cfg);
    const int before = omp_get_max_threads();
    VariationalParams g1, g4;
    omp_set_num_threads(1);
    const auto e1 = elbo_grad(pb, vp, NoiseKey{8, 3}, g1);
    omp_set_num_threads(4);
    const auto e4 = elbo_grad(pb, vp, NoiseKey{8, 3}, g4);
    omp_set_num_threads(before);
    EXPECT_EQ(e1.total, e4.total);
    EXPECT_TRUE(g1 == g4);
}

TEST(Elbo, NonFiniteTermIsReported) {
    const auto ds = make_dataset(2, 2, 2, 6);
    const auto cfg = family_preset("hv-gfgl");
    auto [vp, prior] = init_params(ds, cfg);
    vp.mu(0, 0) = std::nan("");
    const ElboProblem pb(ds, prior, cfg);
    try {
        elbo_estimate(pb, vp, NoiseKey{1, 1});
        FAIL() << "expected a numerical error";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("loglik_obs"), std::string::npos) << e.what();
    }
}
