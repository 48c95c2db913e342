#pragma once

#include <cstdint>
#include <vector>

#include "gfgl/dataset.hpp"
#include "gfgl/likelihood.hpp"
#include "gfgl/priors.hpp"
#include "gfgl/variational.hpp"

namespace gfgl {

struct ElboBreakdown {
    double loglik_obs = 0.0;
    double loglik_censor = 0.0;
    double prior_alpha = 0.0;
    double entropy_theta = 0.0;
    double kl_nu = 0.0;
    double kl_lambda = 0.0;
    double total = 0.0;
    /// Censored pixels whose Monte Carlo estimate had no in-region draws.
    std::size_t censor_floors = 0;

    void finalize() { total = loglik_obs + loglik_censor + prior_alpha + entropy_theta - kl_nu - kl_lambda; }
};

/// Every random input of one ELBO evaluation. Holding it fixed while the
/// parameters move gives common-random-number evaluations.
struct BaseNoise {
    Tensor3 normal;      // S x M x D
    GammaNoise nu;       // S x R x D
    GammaNoise lambda;   // S x 1 x D
    /// Index s * M + i; empty draws for pixels without censoring.
    std::vector<CensorDraws> censor;

    std::size_t num_samples() const { return normal.dim0(); }
};

/// Dataset, prior and family bound together with the per-dataset constants
/// (totals, multinomial coefficients) the ELBO needs.
class ElboProblem {
  public:
    ElboProblem(const CountDataset& ds, PriorConfig prior, FamilyConfig cfg);

    const CountDataset& dataset() const { return *ds_; }
    const PriorConfig& prior() const { return prior_; }
    const FamilyConfig& family() const { return cfg_; }

    /// Samples the base noise, including censored-lattice draws from a
    /// proposal detached at the current parameters.
    BaseNoise draw_noise(const VariationalParams& vp, NoiseKey key) const;

    /// ELBO at fixed noise. Writes gradients with respect to the unconstrained
    /// parameters into `grad` when non-null (overwriting it).
    ElboBreakdown evaluate(const VariationalParams& vp, const BaseNoise& noise, VariationalParams* grad = nullptr) const;

  private:
    void check_shapes(const VariationalParams& vp) const;
    void draw_censor(const DrawBatch& batch, NoiseKey key, std::vector<CensorDraws>& out) const;
    ElboBreakdown evaluate_batch(const VariationalParams& vp, const DrawBatch& batch,
                                 const std::vector<CensorDraws>& censor, VariationalParams* grad) const;

    const CountDataset* ds_;
    PriorConfig prior_;
    FamilyConfig cfg_;
    std::vector<double> totals_;
    double log_coefficient_ = 0.0;
    std::vector<std::uint8_t> censored_pixel_;

    friend ElboBreakdown elbo_estimate(const ElboProblem&, const VariationalParams&, NoiseKey);
    friend ElboBreakdown elbo_grad(const ElboProblem&, const VariationalParams&, NoiseKey, VariationalParams&);
};

/// Stochastic ELBO with S = samples_grad draws.
ElboBreakdown elbo_estimate(const ElboProblem& problem, const VariationalParams& vp, NoiseKey key);

/// Stochastic ELBO and its gradient: pathwise for normal draws, implicit
/// reparameterization for gamma draws, importance weights with a detached
/// proposal for the censored term.
ElboBreakdown elbo_grad(const ElboProblem& problem, const VariationalParams& vp, NoiseKey key,
                        VariationalParams& grad);

/// ELBO at supplied base noise.
ElboBreakdown elbo_estimate_crn(const ElboProblem& problem, const VariationalParams& vp, const BaseNoise& noise,
                                VariationalParams* grad = nullptr);

}  // namespace gfgl
