#include "gfgl/elbo.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "gfgl/special.hpp"

namespace gfgl {

namespace {

constexpr std::uint64_t kTagCensor = 4;
const double kHalfLog2PiE = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);

void require_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ELBO term: ") + term);
}

// Penalty coefficient c(nu) multiplying |alpha| and its derivative.
struct Coef {
    double value;
    double d_nu;
};

Coef penalty_coef(LaplaceForm form, double nu) {
    if (form == LaplaceForm::rate) return {nu, 1.0};
    return {1.0 / nu, -1.0 / (nu * nu)};
}

}  // namespace

ElboProblem::ElboProblem(const CountDataset& ds, PriorConfig prior, FamilyConfig cfg)
    : ds_(&ds), prior_(std::move(prior)), cfg_(cfg) {
    cfg_.validate();
    if (prior_.kind != cfg_.prior_kind) throw ConfigError("prior kind does not match the family configuration");
    prior_.validate(ds.num_molecules());
    const auto totals = compute_totals(ds);
    totals_.assign(totals.begin(), totals.end());
    censored_pixel_.resize(ds.num_pixels());
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        log_coefficient_ += log_multinomial_coefficient(ds.counts().row(i), ds.observed().row(i));
        censored_pixel_[i] = ds.has_censoring(i) ? 1 : 0;
    }
}

void ElboProblem::check_shapes(const VariationalParams& vp) const {
    const auto& g = ds_->graph();
    if (vp.num_vertices() != g.num_vertices() || vp.num_edges() != g.num_edges() ||
        vp.num_molecules() != ds_->num_molecules() || vp.log_sigma.rows() != g.num_vertices() ||
        vp.log_b.rows() != g.num_edges() || vp.log_lam0.size() != ds_->num_molecules() ||
        vp.log_lam1.size() != ds_->num_molecules()) {
        throw DimensionError("variational parameter shapes do not match the dataset");
    }
}

void ElboProblem::draw_censor(const DrawBatch& batch, NoiseKey key, std::vector<CensorDraws>& out) const {
    const std::size_t m = ds_->num_pixels();
    const std::size_t d_count = ds_->num_molecules();
    const std::size_t s_count = batch.num_samples();
    out.assign(s_count * m, CensorDraws{});
    for (std::size_t s = 0; s < s_count; ++s) {
#pragma omp parallel for schedule(dynamic, 16)
        for (std::size_t i = 0; i < m; ++i) {
            if (!censored_pixel_[i]) continue;
            const auto row = batch.log_theta.row(s, i);
            const auto obs = ds_->observed().row(i);
            std::vector<double> all(row.begin(), row.end());
            std::vector<double> observed_vals;
            std::vector<double> log_pc;
            std::vector<std::int64_t> lods;
            for (std::size_t d = 0; d < d_count; ++d) {
                if (obs[d]) observed_vals.push_back(row[d]);
            }
            const double lse_all = special::log_sum_exp(all);
            const double lse_obs = special::log_sum_exp(observed_vals);
            for (std::size_t d = 0; d < d_count; ++d) {
                if (obs[d]) continue;
                log_pc.push_back(row[d] - lse_all);
                lods.push_back(ds_->lod()[d]);
            }
            Rng rng = Rng::stream(key.seed, {key.counter, kTagCensor, s, i});
            out[s * m + i] = sample_censor_draws(log_pc, lse_obs - lse_all, totals_[i], lods, cfg_.samples_cdf, rng);
        }
    }
}

BaseNoise ElboProblem::draw_noise(const VariationalParams& vp, NoiseKey key) const {
    check_shapes(vp);
    BaseNoise noise;
    draw_base_noise(vp, cfg_.samples_grad, key, noise.normal, noise.nu, noise.lambda);
    const auto batch = materialize_draws(vp, ds_->graph(), cfg_.family, noise.normal, noise.nu, noise.lambda);
    draw_censor(batch, key, noise.censor);
    return noise;
}

ElboBreakdown ElboProblem::evaluate(const VariationalParams& vp, const BaseNoise& noise,
                                    VariationalParams* grad) const {
    check_shapes(vp);
    if (noise.censor.size() != noise.num_samples() * ds_->num_pixels()) {
        throw DimensionError("base noise has the wrong number of censored-draw slots");
    }
    const auto batch = materialize_draws(vp, ds_->graph(), cfg_.family, noise.normal, noise.nu, noise.lambda);
    return evaluate_batch(vp, batch, noise.censor, grad);
}

ElboBreakdown ElboProblem::evaluate_batch(const VariationalParams& vp, const DrawBatch& batch,
                                          const std::vector<CensorDraws>& censor, VariationalParams* grad) const {
    const auto& graph = ds_->graph();
    const std::size_t m = ds_->num_pixels();
    const std::size_t r_count = graph.num_edges();
    const std::size_t d_count = ds_->num_molecules();
    const std::size_t s_count = batch.num_samples();
    const double inv_s = 1.0 / static_cast<double>(s_count);
    const bool gamma_lasso = prior_.kind == PriorKind::gamma_lasso;
    const bool hierarchical = cfg_.family == Family::hierarchical;
    const LaplaceForm form = cfg_.laplace_form;
    const PenaltyCoupling coupling = cfg_.resolved_coupling();
    const bool want_grad = grad != nullptr;

    ElboBreakdown out;
    // d ELBO_s / d log_theta(s, i, d), before the 1/S factor.
    Tensor3 g_theta(s_count, m, d_count, 0.0);

    // Likelihood.
    std::vector<double> obs_terms(s_count * m, 0.0);
    std::vector<double> cens_terms(s_count * m, 0.0);
    std::vector<std::uint8_t> floors(s_count * m, 0);
    for (std::size_t s = 0; s < s_count; ++s) {
#pragma omp parallel for schedule(dynamic, 16)
        for (std::size_t i = 0; i < m; ++i) {
            const auto row = batch.log_theta.row(s, i);
            const auto obs = ds_->observed().row(i);
            const auto cnt = ds_->counts().row(i);
            auto g_row = g_theta.row(s, i);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t d = 0; d < d_count; ++d) {
                if (obs[d]) mx = std::max(mx, row[d]);
            }
            double se = 0.0;
            for (std::size_t d = 0; d < d_count; ++d) {
                if (obs[d]) se += std::exp(row[d] - mx);
            }
            const double lse_obs = mx + std::log(se);
            double ll = 0.0;
            for (std::size_t d = 0; d < d_count; ++d) {
                if (!obs[d]) continue;
                const double x = static_cast<double>(cnt[d]);
                ll += x * (row[d] - lse_obs);
                if (want_grad) g_row[d] += x - totals_[i] * std::exp(row[d] - lse_obs);
            }
            obs_terms[s * m + i] = ll;
            if (censored_pixel_[i]) {
                bool floored = false;
                cens_terms[s * m + i] =
                    censor_log_psi_row(censor[s * m + i], row, obs, totals_[i],
                                       want_grad ? g_row : std::span<double>{}, &floored);
                floors[s * m + i] = floored ? 1 : 0;
            }
        }
    }
    out.loglik_obs = log_coefficient_ + inv_s * std::accumulate(obs_terms.begin(), obs_terms.end(), 0.0);
    out.loglik_censor = inv_s * std::accumulate(cens_terms.begin(), cens_terms.end(), 0.0);
    out.censor_floors = static_cast<std::size_t>(std::accumulate(floors.begin(), floors.end(), std::size_t{0}));

    // Per-sample gradient w.r.t. nu(s, r, d), before the 1/S factor.
    Tensor3 g_nu;
    bool nu_has_grad = false;
    if (want_grad && gamma_lasso) g_nu = Tensor3(s_count, r_count, d_count, 0.0);

    VariationalParams local_grad;
    if (want_grad) local_grad = vp.zeros_like();

    // Prior on edge differences.
    {
        const auto edges = graph.edges();
        double prior = 0.0;
        for (std::size_t r = 0; r < r_count; ++r) {
            const auto lo = edges[r].lo;
            const auto hi = edges[r].hi;
            for (std::size_t d = 0; d < d_count; ++d) {
                double mean_abs = 0.0;
                for (std::size_t s = 0; s < s_count; ++s) {
                    mean_abs += std::abs(batch.log_theta(s, lo, d) - batch.log_theta(s, hi, d));
                }
                mean_abs *= inv_s;

                // Coefficient per theta sample (shared), or a common one.
                double common = 0.0;
                if (!gamma_lasso) {
                    common = penalty_coef(form, prior_.fixed_nu[d]).value;
                    if (cfg_.include_normalizer) {
                        prior += (form == LaplaceForm::rate ? 1.0 : -1.0) * std::log(prior_.fixed_nu[d]) -
                                 std::numbers::ln2;
                    }
                } else {
                    const double a = std::exp(vp.log_a(r, d));
                    const double b = std::exp(vp.log_b(r, d));
                    if (cfg_.include_normalizer) {
                        const double sign = form == LaplaceForm::rate ? 1.0 : -1.0;
                        prior += sign * (special::digamma(a) - std::log(b)) - std::numbers::ln2;
                        if (want_grad) {
                            local_grad.log_a(r, d) += sign * a * special::trigamma(a);
                            local_grad.log_b(r, d) -= sign;
                        }
                    }
                    if (coupling == PenaltyCoupling::closed_form) {
                        common = a / b;
                        if (want_grad) {
                            local_grad.log_a(r, d) -= common * mean_abs;
                            local_grad.log_b(r, d) += common * mean_abs;
                        }
                    } else if (coupling == PenaltyCoupling::cross_product) {
                        for (std::size_t s = 0; s < s_count; ++s) {
                            const auto c = penalty_coef(form, batch.nu(s, r, d));
                            common += c.value;
                            if (want_grad) g_nu(s, r, d) -= mean_abs * c.d_nu;
                        }
                        common *= inv_s;
                        nu_has_grad = true;
                    }
                }

                if (gamma_lasso && coupling == PenaltyCoupling::shared_draws) {
                    nu_has_grad = true;
                    for (std::size_t s = 0; s < s_count; ++s) {
                        const double delta = batch.log_theta(s, lo, d) - batch.log_theta(s, hi, d);
                        const auto c = penalty_coef(form, batch.nu(s, r, d));
                        prior -= inv_s * c.value * std::abs(delta);
                        if (want_grad) {
                            const double sg = (delta > 0.0) - (delta < 0.0);
                            g_theta(s, lo, d) -= c.value * sg;
                            g_theta(s, hi, d) += c.value * sg;
                            g_nu(s, r, d) -= std::abs(delta) * c.d_nu;
                        }
                    }
                } else {
                    prior -= common * mean_abs;
                    if (want_grad) {
                        for (std::size_t s = 0; s < s_count; ++s) {
                            const double delta = batch.log_theta(s, lo, d) - batch.log_theta(s, hi, d);
                            const double sg = (delta > 0.0) - (delta < 0.0);
                            g_theta(s, lo, d) -= common * sg;
                            g_theta(s, hi, d) += common * sg;
                        }
                    }
                }
            }
        }
        out.prior_alpha = prior;
    }

    // Entropy of Q(log theta | nu) and the backward pass through log theta.
    {
        std::vector<double> ent(m, 0.0);
        Tensor3 g_gamma;
        if (want_grad && hierarchical) g_gamma = Tensor3(s_count, m, d_count, 0.0);
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < m; ++i) {
            const bool uses_sigma = !hierarchical || graph.degree(i) == 0;
            double e = 0.0;
            for (std::size_t d = 0; d < d_count; ++d) {
                if (uses_sigma) {
                    e += kHalfLog2PiE + vp.log_sigma(i, d);
                } else {
                    for (std::size_t s = 0; s < s_count; ++s) {
                        e += inv_s * (kHalfLog2PiE - 0.5 * std::log(batch.gamma(s, i, d)));
                    }
                }
                if (!want_grad) continue;
                double gm = 0.0;
                for (std::size_t s = 0; s < s_count; ++s) gm += g_theta(s, i, d);
                local_grad.mu(i, d) = inv_s * gm;
                if (uses_sigma) {
                    const double sigma = std::exp(vp.log_sigma(i, d));
                    double gs = 0.0;
                    for (std::size_t s = 0; s < s_count; ++s) gs += g_theta(s, i, d) * sigma * batch.normal(s, i, d);
                    local_grad.log_sigma(i, d) = inv_s * gs + 1.0;
                } else {
                    for (std::size_t s = 0; s < s_count; ++s) {
                        const double gam = batch.gamma(s, i, d);
                        g_gamma(s, i, d) =
                            g_theta(s, i, d) * (-0.5 * batch.normal(s, i, d) / (gam * std::sqrt(gam))) - 0.5 / gam;
                    }
                }
            }
            ent[i] = e;
        }
        out.entropy_theta = std::accumulate(ent.begin(), ent.end(), 0.0);

        if (want_grad && hierarchical) {
            nu_has_grad = true;
            const auto edges = graph.edges();
#pragma omp parallel for schedule(static)
            for (std::size_t r = 0; r < r_count; ++r) {
                for (std::size_t s = 0; s < s_count; ++s) {
                    for (std::size_t d = 0; d < d_count; ++d) {
                        const double nu = batch.nu(s, r, d);
                        g_nu(s, r, d) -= (g_gamma(s, edges[r].lo, d) + g_gamma(s, edges[r].hi, d)) / (nu * nu);
                    }
                }
            }
        }
    }

    // KL(Q(nu) || Exp(lambda)) and KL(Q(lambda) || Exp(tau)).
    Matrix g_lambda;
    bool lambda_has_grad = false;
    if (gamma_lasso) {
        if (want_grad) g_lambda = Matrix(s_count, d_count, 0.0);
        double kl_nu = 0.0;
        double kl_lam = 0.0;
        for (std::size_t d = 0; d < d_count; ++d) {
            const double lam0 = std::exp(vp.log_lam0[d]);
            const double lam1 = std::exp(vp.log_lam1[d]);
            const double e_lam = lam0 / lam1;
            const double e_log_lam = special::digamma(lam0) - std::log(lam1);
            double g_e_lam = 0.0;
            double g_e_log_lam = 0.0;
            for (std::size_t r = 0; r < r_count; ++r) {
                const double a = std::exp(vp.log_a(r, d));
                const double b = std::exp(vp.log_b(r, d));
                const double psi_a = special::digamma(a);
                const double base = (a - 1.0) * psi_a - std::lgamma(a) + std::log(b) - a;
                if (cfg_.kl_nu == KlNuExpectation::closed_form) {
                    kl_nu += base - e_log_lam + e_lam * a / b;
                    if (want_grad) {
                        local_grad.log_a(r, d) -= a * ((a - 1.0) * special::trigamma(a) - 1.0 + e_lam / b);
                        local_grad.log_b(r, d) -= 1.0 - e_lam * a / b;
                        g_e_lam += a / b;
                        g_e_log_lam -= 1.0;
                    }
                } else {
                    for (std::size_t s = 0; s < s_count; ++s) {
                        const double lam = batch.lambda(s, d);
                        kl_nu += inv_s * (base - std::log(lam) + lam * a / b);
                        if (want_grad) {
                            local_grad.log_a(r, d) -= inv_s * a * ((a - 1.0) * special::trigamma(a) - 1.0 + lam / b);
                            local_grad.log_b(r, d) -= inv_s * (1.0 - lam * a / b);
                            g_lambda(s, d) -= -1.0 / lam + a / b;
                        }
                    }
                    lambda_has_grad = true;
                }
            }
            if (want_grad) {
                // The KL enters with a minus sign; g_e_* already hold d KL.
                local_grad.log_lam0[d] -= g_e_lam * e_lam + g_e_log_lam * lam0 * special::trigamma(lam0);
                local_grad.log_lam1[d] -= -g_e_lam * e_lam - g_e_log_lam;
            }
            const auto kl = kl_gamma_exp_grad(lam0, lam1, prior_.tau[d]);
            kl_lam += kl.value;
            if (want_grad) {
                local_grad.log_lam0[d] -= kl.d_a * lam0;
                local_grad.log_lam1[d] -= kl.d_b * lam1;
            }
        }
        out.kl_nu = kl_nu;
        out.kl_lambda = kl_lam;
    }

    // Implicit reparameterization through the gamma draws.
    if (want_grad && gamma_lasso && nu_has_grad) {
#pragma omp parallel for schedule(static)
        for (std::size_t r = 0; r < r_count; ++r) {
            for (std::size_t d = 0; d < d_count; ++d) {
                const double a = std::exp(vp.log_a(r, d));
                const double inv_b = std::exp(-vp.log_b(r, d));
                double ga = 0.0;
                double gb = 0.0;
                for (std::size_t s = 0; s < s_count; ++s) {
                    const double gn = g_nu(s, r, d);
                    if (gn == 0.0) continue;
                    ga += gn * a * inv_b * special::standard_gamma_dshape(a, batch.nu_std(s, r, d));
                    gb -= gn * batch.nu(s, r, d);
                }
                local_grad.log_a(r, d) += inv_s * ga;
                local_grad.log_b(r, d) += inv_s * gb;
            }
        }
    }
    if (want_grad && lambda_has_grad) {
        for (std::size_t d = 0; d < d_count; ++d) {
            const double lam0 = std::exp(vp.log_lam0[d]);
            const double inv_lam1 = std::exp(-vp.log_lam1[d]);
            for (std::size_t s = 0; s < s_count; ++s) {
                const double gl = g_lambda(s, d);
                local_grad.log_lam0[d] +=
                    inv_s * gl * lam0 * inv_lam1 * special::standard_gamma_dshape(lam0, batch.lambda_std(s, d));
                local_grad.log_lam1[d] -= inv_s * gl * batch.lambda(s, d);
            }
        }
    }

    require_finite(out.loglik_obs, "loglik_obs");
    require_finite(out.loglik_censor, "loglik_censor");
    require_finite(out.prior_alpha, "prior_alpha");
    require_finite(out.entropy_theta, "entropy_theta");
    require_finite(out.kl_nu, "kl_nu");
    require_finite(out.kl_lambda, "kl_lambda");
    out.finalize();

    if (want_grad) {
        local_grad.visit([](std::string_view name, std::span<const double> v) {
            for (double x : v) {
                if (!std::isfinite(x)) throw NumericalError("non-finite gradient in " + std::string(name));
            }
        });
        *grad = std::move(local_grad);
    }
    return out;
}

ElboBreakdown elbo_estimate(const ElboProblem& problem, const VariationalParams& vp, NoiseKey key) {
    problem.check_shapes(vp);
    BaseNoise noise;
    draw_base_noise(vp, problem.cfg_.samples_grad, key, noise.normal, noise.nu, noise.lambda);
    const auto batch = materialize_draws(vp, problem.ds_->graph(), problem.cfg_.family, noise.normal, noise.nu,
                                         noise.lambda);
    problem.draw_censor(batch, key, noise.censor);
    return problem.evaluate_batch(vp, batch, noise.censor, nullptr);
}

ElboBreakdown elbo_grad(const ElboProblem& problem, const VariationalParams& vp, NoiseKey key,
                        VariationalParams& grad) {
    problem.check_shapes(vp);
    BaseNoise noise;
    draw_base_noise(vp, problem.cfg_.samples_grad, key, noise.normal, noise.nu, noise.lambda);
    const auto batch = materialize_draws(vp, problem.ds_->graph(), problem.cfg_.family, noise.normal, noise.nu,
                                         noise.lambda);
    problem.draw_censor(batch, key, noise.censor);
    return problem.evaluate_batch(vp, batch, noise.censor, &grad);
}

ElboBreakdown elbo_estimate_crn(const ElboProblem& problem, const VariationalParams& vp, const BaseNoise& noise,
                                VariationalParams* grad) {
    return problem.evaluate(vp, noise, grad);
}

}  // namespace gfgl
