#pragma once

#include <span>

namespace gfgl::special {

double digamma(double x);
double trigamma(double x);

/// Regularized lower incomplete gamma P(a, x).
double gamma_cdf(double shape, double x);

/// Inverse of gamma_cdf in x: the Gamma(shape, 1) quantile at probability u.
double gamma_quantile(double shape, double u);

/// Implicit reparameterization gradient of a Gamma(shape, 1) draw.
///
/// Holding the quantile u = P(shape, x) fixed, returns dx/dshape =
/// -(dP/dshape) / p(x; shape). Inside the bulk this uses the series
///   dx/da = -sum_n R_n (log x - psi(a + n + 1)),  R_n = x^{n+1} G(a) / G(a + n + 1),
/// and beyond five standard deviations the equivalent tail integral
///   dx/da = int_0^inf (1 + s/x)^{a-1} e^{-s} (log(x + s) - psi(a)) ds,
/// which avoids the cancellation the series suffers when P is close to one.
double standard_gamma_dshape(double shape, double x);

/// Numerically stable log(sum(exp(v))). Returns -inf for an empty span.
double log_sum_exp(std::span<const double> v);

}  // namespace gfgl::special
