#include "gfgl/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "gfgl/special.hpp"

namespace gfgl {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

std::vector<double> softmax_rates(std::span<const double> log_theta) {
    std::vector<double> p(log_theta.size());
    if (p.empty()) return p;
    const double m = *std::max_element(log_theta.begin(), log_theta.end());
    double s = 0.0;
    for (std::size_t d = 0; d < p.size(); ++d) {
        p[d] = std::exp(log_theta[d] - m);
        s += p[d];
    }
    for (double& v : p) v /= s;
    return p;
}

double log_multinomial_coefficient(std::span<const std::int64_t> counts, std::span<const std::uint8_t> observed) {
    require_same_length(observed.size(), counts.size(), "log_multinomial_coefficient");
    double total = 0.0;
    double acc = 0.0;
    for (std::size_t d = 0; d < counts.size(); ++d) {
        if (!observed[d]) continue;
        total += static_cast<double>(counts[d]);
        acc -= std::lgamma(static_cast<double>(counts[d]) + 1.0);
    }
    return acc + std::lgamma(total + 1.0);
}

double observed_multinomial_loglik(std::span<const std::int64_t> counts, std::span<const double> p,
                                   std::span<const std::uint8_t> observed) {
    require_same_length(p.size(), counts.size(), "observed_multinomial_loglik");
    require_same_length(observed.size(), counts.size(), "observed_multinomial_loglik");
    double mass = 0.0;
    bool any = false;
    for (std::size_t d = 0; d < p.size(); ++d) {
        if (observed[d]) {
            mass += p[d];
            any = true;
        }
    }
    if (!any) throw DomainError("observed_multinomial_loglik: no observed entries");
    double ll = log_multinomial_coefficient(counts, observed);
    for (std::size_t d = 0; d < p.size(); ++d) {
        if (!observed[d] || counts[d] == 0) continue;
        if (p[d] <= 0.0) return kNegInf;
        ll += static_cast<double>(counts[d]) * std::log(p[d] / mass);
    }
    return ll;
}

double negmult_logpmf(std::span<const std::int64_t> k, std::span<const double> p_c, double n_obs) {
    require_same_length(p_c.size(), k.size(), "negmult_logpmf");
    if (!(n_obs > 0.0)) throw DomainError("negmult_logpmf: failure count must be positive");
    double psum = 0.0;
    for (double p : p_c) {
        if (p < 0.0) throw DomainError("negmult_logpmf: negative probability");
        psum += p;
    }
    if (psum >= 1.0) throw DomainError("negmult_logpmf: success probabilities must sum below 1");
    double ksum = 0.0;
    double lp = n_obs * std::log1p(-psum) - std::lgamma(n_obs);
    for (std::size_t j = 0; j < k.size(); ++j) {
        if (k[j] < 0) throw DomainError("negmult_logpmf: negative count");
        const double kj = static_cast<double>(k[j]);
        ksum += kj;
        lp -= std::lgamma(kj + 1.0);
        if (k[j] > 0) {
            if (p_c[j] == 0.0) return kNegInf;
            lp += kj * std::log(p_c[j]);
        }
    }
    return lp + std::lgamma(n_obs + ksum);
}

double censor_cdf_exact(const CensorBlock& block) {
    const std::size_t c = block.lods.size();
    require_same_length(block.p.size(), c, "censor_cdf_exact");
    double lattice = 1.0;
    for (auto l : block.lods) {
        if (l < 1) throw DomainError("censor_cdf_exact: limits of detection must be >= 1");
        lattice *= static_cast<double>(l);
    }
    if (lattice > kExactLatticeLimit) {
        throw OracleRegimeError("censor_cdf_exact: lattice of " + std::to_string(lattice) +
                                " points exceeds the exact regime; use censor_cdf_mc");
    }
    std::vector<std::int64_t> k(c, 0);
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(lattice));
    for (;;) {
        terms.push_back(negmult_logpmf(k, block.p, block.n_obs));
        std::size_t j = 0;
        while (j < c) {
            if (++k[j] < block.lods[j]) break;
            k[j] = 0;
            ++j;
        }
        if (j == c) break;
    }
    return special::log_sum_exp(terms);
}

CensorDraws sample_censor_draws(std::span<const double> log_p0_censored, double log_p0_fail, double n_obs,
                                std::span<const std::int64_t> lods, std::size_t num_draws, Rng& rng) {
    require_same_length(lods.size(), log_p0_censored.size(), "sample_censor_draws");
    const std::size_t c = lods.size();
    CensorDraws out;
    out.num_draws = num_draws;
    out.width = c;
    std::vector<double> odds(c);
    for (std::size_t j = 0; j < c; ++j) odds[j] = std::exp(log_p0_censored[j] - log_p0_fail);
    std::vector<std::int64_t> k(c);
    for (std::size_t t = 0; t < num_draws; ++t) {
        const double omega = rng.standard_gamma(n_obs);
        bool inside = true;
        for (std::size_t j = 0; j < c; ++j) {
            k[j] = rng.poisson_capped(omega * odds[j], lods[j]);
            if (k[j] >= lods[j]) {
                inside = false;
                break;
            }
        }
        if (!inside) continue;
        double kernel = n_obs * log_p0_fail;
        for (std::size_t j = 0; j < c; ++j) kernel += static_cast<double>(k[j]) * log_p0_censored[j];
        out.counts.insert(out.counts.end(), k.begin(), k.end());
        out.log_kernel.push_back(kernel);
    }
    return out;
}

CensorEstimate evaluate_censor_draws(const CensorDraws& draws, std::span<const double> log_p_censored,
                                     double log_p_fail, double n_obs) {
    require_same_length(log_p_censored.size(), draws.width, "evaluate_censor_draws");
    CensorEstimate est;
    est.mean_counts.assign(draws.width, 0.0);
    const std::size_t inside = draws.num_inside();
    if (inside == 0 || draws.num_draws == 0) {
        est.log_psi = kLogPsiFloor;
        est.floored = true;
        return est;
    }
    std::vector<double> log_w(inside);
    for (std::size_t t = 0; t < inside; ++t) {
        double lw = n_obs * log_p_fail - draws.log_kernel[t];
        for (std::size_t j = 0; j < draws.width; ++j) {
            lw += static_cast<double>(draws.counts[t * draws.width + j]) * log_p_censored[j];
        }
        log_w[t] = lw;
    }
    const double lse = special::log_sum_exp(log_w);
    est.log_psi = lse - std::log(static_cast<double>(draws.num_draws));
    for (std::size_t t = 0; t < inside; ++t) {
        const double w = std::exp(log_w[t] - lse);
        for (std::size_t j = 0; j < draws.width; ++j) {
            est.mean_counts[j] += w * static_cast<double>(draws.counts[t * draws.width + j]);
        }
    }
    return est;
}

double censor_cdf_mc(const CensorBlock& block, std::size_t num_samples, Rng& rng, std::vector<double>* grad_p,
                     std::size_t* floor_count) {
    const std::size_t c = block.lods.size();
    require_same_length(block.p.size(), c, "censor_cdf_mc");
    if (num_samples == 0) throw DomainError("censor_cdf_mc: num_samples must be >= 1");
    double psum = 0.0;
    std::vector<double> log_p(c);
    for (std::size_t j = 0; j < c; ++j) {
        if (!(block.p[j] > 0.0)) throw DomainError("censor_cdf_mc: probabilities must be positive");
        psum += block.p[j];
        log_p[j] = std::log(block.p[j]);
    }
    if (psum >= 1.0) throw DomainError("censor_cdf_mc: success probabilities must sum below 1");
    const double log_fail = std::log1p(-psum);
    const auto draws = sample_censor_draws(log_p, log_fail, block.n_obs, block.lods, num_samples, rng);
    const auto est = evaluate_censor_draws(draws, log_p, log_fail, block.n_obs);
    if (est.floored && floor_count) ++*floor_count;
    if (grad_p) {
        grad_p->assign(c, 0.0);
        if (!est.floored) {
            const double p_fail = 1.0 - psum;
            for (std::size_t j = 0; j < c; ++j) {
                (*grad_p)[j] = est.mean_counts[j] / block.p[j] - block.n_obs / p_fail;
            }
        }
    }
    return est.log_psi;
}

double censor_log_psi_row(const CensorDraws& draws, std::span<const double> log_theta,
                          std::span<const std::uint8_t> observed, double n_obs, std::span<double> grad,
                          bool* floored) {
    const std::size_t d = log_theta.size();
    double m_all = -std::numeric_limits<double>::infinity();
    double m_obs = m_all;
    for (std::size_t k = 0; k < d; ++k) {
        m_all = std::max(m_all, log_theta[k]);
        if (observed[k]) m_obs = std::max(m_obs, log_theta[k]);
    }
    double s_all = 0.0;
    double s_obs = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        s_all += std::exp(log_theta[k] - m_all);
        if (observed[k]) s_obs += std::exp(log_theta[k] - m_obs);
    }
    const double lse_all = m_all + std::log(s_all);
    const double lse_obs = m_obs + std::log(s_obs);

    std::vector<double> log_pc;
    log_pc.reserve(draws.width);
    for (std::size_t k = 0; k < d; ++k) {
        if (!observed[k]) log_pc.push_back(log_theta[k] - lse_all);
    }
    const auto est = evaluate_censor_draws(draws, log_pc, lse_obs - lse_all, n_obs);
    if (floored) *floored = est.floored;
    if (!grad.empty() && !est.floored) {
        double mean_total = 0.0;
        for (double v : est.mean_counts) mean_total += v;
        std::size_t j = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const double p = std::exp(log_theta[k] - lse_all);
            if (observed[k]) {
                grad[k] += n_obs * std::exp(log_theta[k] - lse_obs) - (n_obs + mean_total) * p;
            } else {
                grad[k] += est.mean_counts[j++] - (n_obs + mean_total) * p;
            }
        }
    }
    return est.log_psi;
}

double dataset_loglik(const CountDataset& ds, const Matrix& log_theta, std::size_t mc_samples, std::uint64_t seed) {
    const std::size_t m = ds.num_pixels();
    const std::size_t d = ds.num_molecules();
    if (log_theta.rows() != m || log_theta.cols() != d) throw DimensionError("dataset_loglik: log_theta shape mismatch");
    const auto totals = compute_totals(ds);
    std::vector<double> per_pixel(m, 0.0);

#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = log_theta.row(i);
        const auto obs = ds.observed().row(i);
        const auto p = softmax_rates(row);
        double ll = observed_multinomial_loglik(ds.counts().row(i), p, obs);
        if (ds.has_censoring(i)) {
            std::vector<double> log_pc;
            std::vector<std::int64_t> lods;
            double lse_obs_mass = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                if (obs[k]) {
                    lse_obs_mass += p[k];
                } else {
                    log_pc.push_back(std::log(p[k]));
                    lods.push_back(ds.lod()[k]);
                }
            }
            Rng rng = Rng::stream(seed, {static_cast<std::uint64_t>(i)});
            const double n = static_cast<double>(totals[i]);
            const auto draws = sample_censor_draws(log_pc, std::log(lse_obs_mass), n, lods, mc_samples, rng);
            ll += censor_log_psi_row(draws, row, obs, n, {});
        }
        per_pixel[i] = ll;
    }
    return std::accumulate(per_pixel.begin(), per_pixel.end(), 0.0);
}

}  // namespace gfgl
