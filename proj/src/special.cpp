#include "gfgl/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace gfgl::special {

double digamma(double x) { return boost::math::digamma(x); }

double trigamma(double x) { return boost::math::trigamma(x); }

double gamma_cdf(double shape, double x) { return boost::math::gamma_p(shape, x); }

double gamma_quantile(double shape, double u) { return boost::math::gamma_p_inv(shape, u); }

namespace {

double dshape_series(double a, double x) {
    const double log_x = std::log(x);
    double ratio = x / a;
    double psi = digamma(a + 1.0);
    double sum = 0.0;
    double abs_sum = 0.0;
    for (int n = 0; n < 100000; ++n) {
        if (n > 0) {
            ratio *= x / (a + n);
            psi += 1.0 / (a + n);
        }
        const double term = ratio * (log_x - psi);
        sum += term;
        abs_sum += std::abs(term);
        if (n + a > x && ratio * (1.0 + std::abs(log_x - psi)) < 1e-17 * abs_sum) break;
    }
    return -sum;
}

double dshape_tail(double a, double x) {
    const double psi_a = digamma(a);
    auto integrand = [&](double s) {
        return std::exp((a - 1.0) * std::log1p(s / x) - s) * (std::log(x + s) - psi_a);
    };
    boost::math::quadrature::exp_sinh<double> integrator;
    return integrator.integrate(integrand, 1e-13);
}

}  // namespace

double standard_gamma_dshape(double shape, double x) {
    if (x <= 0.0) return 0.0;
    if (x > shape + 5.0 * std::sqrt(shape) + 5.0) return dshape_tail(shape, x);
    return dshape_series(shape, x);
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace gfgl::special
