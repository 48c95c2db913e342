#include "gfgl/priors.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "gfgl/special.hpp"

namespace gfgl {

void PriorConfig::validate(std::size_t num_molecules) const {
    if (kind == PriorKind::gamma_lasso) {
        require_same_length(tau.size(), num_molecules, "PriorConfig::tau");
        for (double t : tau) {
            if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("PriorConfig: tau must be positive and finite");
        }
    } else {
        require_same_length(fixed_nu.size(), num_molecules, "PriorConfig::fixed_nu");
        for (double v : fixed_nu) {
            if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("PriorConfig: fixed_nu must be positive and finite");
        }
    }
}

double laplace_edge_logpdf(double alpha, double nu) {
    if (!(nu > 0.0)) throw DomainError("laplace_edge_logpdf: nu must be positive");
    return std::log(0.5 * nu) - nu * std::abs(alpha);
}

double kl_gamma_exp(double a, double b, double lam) { return kl_gamma_exp_grad(a, b, lam).value; }

KlGammaExpGrad kl_gamma_exp_grad(double a, double b, double lam) {
    if (!(a > 0.0) || !(b > 0.0) || !(lam > 0.0)) throw DomainError("kl_gamma_exp: parameters must be positive");
    const double psi = special::digamma(a);
    KlGammaExpGrad g{};
    // Grouped so that each pair cancels exactly at (1, lam, lam).
    g.value = ((a - 1.0) * psi - std::lgamma(a)) + (std::log(b) - std::log(lam)) + (lam * a / b - a);
    g.d_a = (a - 1.0) * special::trigamma(a) - 1.0 + lam / b;
    g.d_b = 1.0 / b - lam * a / (b * b);
    g.d_lam = -1.0 / lam + a / b;
    return g;
}

namespace {

void check_shapes(const Tensor3& x, std::size_t rows, std::size_t cols, const char* what) {
    if (x.dim1() != rows || x.dim2() != cols) throw DimensionError(std::string(what) + ": shape mismatch");
}

}  // namespace

double expected_log_prior_alpha(const Tensor3& alpha, const Tensor3& nu, bool include_normalizer) {
    check_shapes(nu, alpha.dim1(), alpha.dim2(), "expected_log_prior_alpha");
    if (alpha.dim0() == 0 || nu.dim0() == 0) throw DimensionError("expected_log_prior_alpha: no samples");
    const std::size_t r_count = alpha.dim1();
    const std::size_t d_count = alpha.dim2();
    double total = 0.0;
    for (std::size_t r = 0; r < r_count; ++r) {
        for (std::size_t d = 0; d < d_count; ++d) {
            double mean_nu = 0.0;
            double mean_log = 0.0;
            for (std::size_t s = 0; s < nu.dim0(); ++s) {
                mean_nu += nu(s, r, d);
                mean_log += std::log(0.5 * nu(s, r, d));
            }
            mean_nu /= static_cast<double>(nu.dim0());
            mean_log /= static_cast<double>(nu.dim0());
            double mean_abs = 0.0;
            for (std::size_t s = 0; s < alpha.dim0(); ++s) mean_abs += std::abs(alpha(s, r, d));
            mean_abs /= static_cast<double>(alpha.dim0());
            total += (include_normalizer ? mean_log : 0.0) - mean_nu * mean_abs;
        }
    }
    return total;
}

double expected_log_prior_alpha_closed(const Tensor3& alpha, const Matrix& a, const Matrix& b,
                                       bool include_normalizer) {
    if (a.rows() != alpha.dim1() || a.cols() != alpha.dim2() || b.rows() != a.rows() || b.cols() != a.cols()) {
        throw DimensionError("expected_log_prior_alpha_closed: shape mismatch");
    }
    if (alpha.dim0() == 0) throw DimensionError("expected_log_prior_alpha_closed: no samples");
    double total = 0.0;
    for (std::size_t r = 0; r < alpha.dim1(); ++r) {
        for (std::size_t d = 0; d < alpha.dim2(); ++d) {
            double mean_abs = 0.0;
            for (std::size_t s = 0; s < alpha.dim0(); ++s) mean_abs += std::abs(alpha(s, r, d));
            mean_abs /= static_cast<double>(alpha.dim0());
            const double e_log = special::digamma(a(r, d)) - std::log(b(r, d)) - std::numbers::ln2;
            total += (include_normalizer ? e_log : 0.0) - a(r, d) / b(r, d) * mean_abs;
        }
    }
    return total;
}

double expected_log_prior_alpha_fixed(const Tensor3& alpha, const std::vector<double>& fixed_nu,
                                      bool include_normalizer) {
    require_same_length(fixed_nu.size(), alpha.dim2(), "expected_log_prior_alpha_fixed");
    if (alpha.dim0() == 0) throw DimensionError("expected_log_prior_alpha_fixed: no samples");
    double total = 0.0;
    for (std::size_t r = 0; r < alpha.dim1(); ++r) {
        for (std::size_t d = 0; d < alpha.dim2(); ++d) {
            double mean_abs = 0.0;
            for (std::size_t s = 0; s < alpha.dim0(); ++s) mean_abs += std::abs(alpha(s, r, d));
            mean_abs /= static_cast<double>(alpha.dim0());
            total += (include_normalizer ? std::log(0.5 * fixed_nu[d]) : 0.0) - fixed_nu[d] * mean_abs;
        }
    }
    return total;
}

}  // namespace gfgl
