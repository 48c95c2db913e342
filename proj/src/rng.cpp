#include "gfgl/rng.hpp"

#include <cmath>
#include <numbers>

namespace gfgl {

double Rng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::standard_gamma(double shape) {
    if (shape < 1.0) {
        const double g = standard_gamma(shape + 1.0);
        return g * std::pow(uniform(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double z;
        double v;
        do {
            z = normal();
            v = 1.0 + c * z;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        const double z2 = z * z;
        if (u < 1.0 - 0.0331 * z2 * z2) return d * v;
        if (std::log(u) < 0.5 * z2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::int64_t Rng::poisson_capped(double mean, std::int64_t cap) {
    if (cap <= 0) return cap;
    const double u = uniform();
    if (mean < 500.0) {
        double pmf = std::exp(-mean);
        double cdf = pmf;
        std::int64_t k = 0;
        while (u > cdf) {
            ++k;
            if (k >= cap) return cap;
            pmf *= mean / static_cast<double>(k);
            cdf += pmf;
        }
        return k;
    }
    // exp(-mean) underflows; walk the pmf in log space instead.
    double log_pmf = -mean;
    double cdf = 0.0;
    for (std::int64_t k = 0; k < cap; ++k) {
        if (k > 0) log_pmf += std::log(mean / static_cast<double>(k));
        cdf += std::exp(log_pmf);
        if (u <= cdf) return k;
    }
    return cap;
}

}  // namespace gfgl
