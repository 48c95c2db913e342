#pragma once

#include <vector>

#include "gfgl/array.hpp"

namespace gfgl {

enum class PriorKind { gamma_lasso, plain_lasso };

/// Hyperparameters of the edge prior.
///
/// gamma-lasso: alpha ~ Laplace(0, 1/nu), nu ~ Exp(lambda), lambda ~ Exp(tau).
/// plain-lasso: alpha ~ Laplace(0, 1/fixed_nu) with one rate per molecule.
struct PriorConfig {
    PriorKind kind = PriorKind::gamma_lasso;
    std::vector<double> tau;
    std::vector<double> fixed_nu;

    void validate(std::size_t num_molecules) const;
    bool operator==(const PriorConfig&) const = default;
};

/// log(nu / 2) - nu |alpha|.
double laplace_edge_logpdf(double alpha, double nu);

/// KL(Gamma(shape a, rate b) || Exp(lam)).
double kl_gamma_exp(double a, double b, double lam);

struct KlGammaExpGrad {
    double value;
    double d_a;
    double d_b;
    double d_lam;
};

KlGammaExpGrad kl_gamma_exp_grad(double a, double b, double lam);

/// Monte Carlo E[log P(alpha | nu)] with a double sum over independent alpha
/// (S2 x R x D) and nu (S1 x R x D) samples, summed over edges and molecules.
double expected_log_prior_alpha(const Tensor3& alpha_samples, const Tensor3& nu_samples, bool include_normalizer);

/// Same expectation with Q(nu) = Gamma(a, b) integrated in closed form:
/// E[nu] = a/b and E[log nu] = psi(a) - log b.
double expected_log_prior_alpha_closed(const Tensor3& alpha_samples, const Matrix& a, const Matrix& b,
                                       bool include_normalizer);

/// Plain-lasso penalty: nu held at fixed_nu[d] for every edge of molecule d.
double expected_log_prior_alpha_fixed(const Tensor3& alpha_samples, const std::vector<double>& fixed_nu,
                                      bool include_normalizer);

}  // namespace gfgl
