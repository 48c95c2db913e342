#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gfgl/array.hpp"
#include "gfgl/dataset.hpp"
#include "gfgl/rng.hpp"

namespace gfgl {

/// p = softmax(log_theta), computed with max subtraction.
std::vector<double> softmax_rates(std::span<const double> log_theta);

/// log of the multinomial coefficient N! / prod x_d! over the observed entries.
double log_multinomial_coefficient(std::span<const std::int64_t> counts, std::span<const std::uint8_t> observed);

/// Multinomial log-likelihood of the observed block with probabilities
/// renormalized over the observed set, including the coefficient.
/// Returns -inf (never throws) when an observed count has zero probability.
double observed_multinomial_loglik(std::span<const std::int64_t> counts, std::span<const double> p,
                                   std::span<const std::uint8_t> observed);

/// Negative multinomial log pmf with failure count n_obs and success
/// probabilities p_c (failure probability 1 - sum p_c), evaluated at k.
double negmult_logpmf(std::span<const std::int64_t> k, std::span<const double> p_c, double n_obs);

/// Censored molecules of one pixel, their limits, probabilities and N_i.
struct CensorBlock {
    std::vector<std::int64_t> lods;
    std::vector<double> p;
    double n_obs = 0.0;
};

inline constexpr double kExactLatticeLimit = 1e6;

/// log Psi: log P(k_j < lod_j for all j) under NM(n_obs; p), by enumerating the
/// lattice. Throws OracleRegimeError above kExactLatticeLimit points.
double censor_cdf_exact(const CensorBlock& block);

/// Lattice draws from a detached negative-multinomial proposal.
///
/// Only draws inside the censoring region are kept; out-of-region draws have
/// zero weight whatever the target. `log_kernel` holds
/// sum_j k_j log p0_j + n log p0_0 at the proposal, i.e. the part of the log
/// pmf that depends on the probabilities.
struct CensorDraws {
    std::size_t num_draws = 0;
    std::size_t width = 0;
    std::vector<std::int64_t> counts;
    std::vector<double> log_kernel;

    std::size_t num_inside() const { return log_kernel.size(); }
    bool operator==(const CensorDraws&) const = default;
};

/// Samples `num_draws` lattice points from NM(n_obs; p0) via the gamma-Poisson
/// mixture: omega ~ Gamma(n_obs, rate p0_0), k_j ~ Poisson(omega p0_j).
CensorDraws sample_censor_draws(std::span<const double> log_p0_censored, double log_p0_fail, double n_obs,
                                std::span<const std::int64_t> lods, std::size_t num_draws, Rng& rng);

/// Importance-weighted evaluation of log Psi at target probabilities.
struct CensorEstimate {
    double log_psi = 0.0;
    /// Weighted mean of each censored count under the normalized importance
    /// weights; the gradient of log Psi w.r.t. log p_j.
    std::vector<double> mean_counts;
    bool floored = false;
};

inline constexpr double kLogPsiFloor = -690.7755278982137;  // log(1e-300)

CensorEstimate evaluate_censor_draws(const CensorDraws& draws, std::span<const double> log_p_censored,
                                     double log_p_fail, double n_obs);

/// Monte Carlo log Psi with the proposal placed at the block's own
/// probabilities, so the value is the log of the in-region fraction.
/// `grad_p`, when non-null, receives d log Psi / d p_j (proposal held fixed).
double censor_cdf_mc(const CensorBlock& block, std::size_t num_samples, Rng& rng,
                     std::vector<double>* grad_p = nullptr, std::size_t* floor_count = nullptr);

/// Censored log Psi for one pixel in terms of its full log-rate row.
/// Adds d log Psi / d log_theta into `grad` when non-empty.
double censor_log_psi_row(const CensorDraws& draws, std::span<const double> log_theta,
                          std::span<const std::uint8_t> observed, double n_obs, std::span<double> grad,
                          bool* floored = nullptr);

/// Sum over pixels of the observed multinomial term plus, where censoring
/// occurs, the Monte Carlo log Psi term. Per-pixel streams derive from `seed`.
double dataset_loglik(const CountDataset& ds, const Matrix& log_theta, std::size_t mc_samples,
                      std::uint64_t seed);

}  // namespace gfgl
