#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gfgl/array.hpp"
#include "gfgl/dataset.hpp"
#include "gfgl/priors.hpp"
#include "gfgl/spatial_graph.hpp"

namespace gfgl {

enum class Family { hierarchical, mean_field };

/// How the Laplace edge prior uses nu.
///  - scale: density exp(-|alpha| / nu) / (2 nu); small nu fuses strongly and
///    also raises the vertex precision gamma = sum 1/nu.
///  - rate:  density (nu / 2) exp(-nu |alpha|).
enum class LaplaceForm { scale, rate };

/// Estimator for E_Q[c(nu) |alpha|] in the ELBO.
///  - automatic:     closed form where Q(theta) and Q(nu) are independent
///                   (mean-field, rate form), shared draws otherwise.
///  - shared_draws:  one nu draw per ELBO sample feeds both Q(theta) and the prior.
///  - closed_form:   E[c(nu)] in closed form times the sampled |alpha|.
///  - cross_product: independent double sum over nu and theta samples.
enum class PenaltyCoupling { automatic, shared_draws, closed_form, cross_product };

/// Outer expectation of KL(Q(nu) || Exp(lambda)) over Q(lambda).
enum class KlNuExpectation { closed_form, sampled };

struct FamilyConfig {
    Family family = Family::hierarchical;
    PriorKind prior_kind = PriorKind::gamma_lasso;
    LaplaceForm laplace_form = LaplaceForm::rate;
    std::size_t samples_grad = 2;
    std::size_t samples_cdf = 100;
    PenaltyCoupling coupling = PenaltyCoupling::automatic;
    KlNuExpectation kl_nu = KlNuExpectation::closed_form;
    bool include_normalizer = true;

    void validate() const;
    /// Coupling estimator actually used after resolving `automatic`.
    PenaltyCoupling resolved_coupling() const;
    bool operator==(const FamilyConfig&) const = default;
};

/// Named presets: "hv-gfgl", "mf-gfgl", "mf-gfl".
FamilyConfig family_preset(std::string_view name);
std::string family_name(const FamilyConfig& cfg);

/// Variational parameters, stored unconstrained (logs of positive quantities).
struct VariationalParams {
    Matrix mu;         // M x D, mean of log theta
    Matrix log_sigma;  // M x D, mean-field std dev; also isolated vertices
    Matrix log_a;      // R x D, Q(nu) shape
    Matrix log_b;      // R x D, Q(nu) rate
    std::vector<double> log_lam0;  // D, Q(lambda) shape
    std::vector<double> log_lam1;  // D, Q(lambda) rate

    VariationalParams() = default;
    VariationalParams(std::size_t num_vertices, std::size_t num_edges, std::size_t num_molecules);

    std::size_t num_vertices() const { return mu.rows(); }
    std::size_t num_edges() const { return log_a.rows(); }
    std::size_t num_molecules() const { return mu.cols(); }

    /// Visits every tensor as (name, flat data) in a fixed order.
    void visit(const std::function<void(std::string_view, std::span<double>)>& fn);
    void visit(const std::function<void(std::string_view, std::span<const double>)>& fn) const;

    VariationalParams zeros_like() const;
    bool operator==(const VariationalParams&) const = default;
};

/// Initialization heuristics scaled to the data: b = lambda1 = mean count,
/// tau = sample variance, a = 2, lambda0 = 1, mu = log smoothed local
/// proportion with censored entries imputed at half the limit of detection.
struct InitDiagnostics {
    std::vector<std::string> warnings;
};

std::pair<VariationalParams, PriorConfig> init_params(const CountDataset& ds, const FamilyConfig& cfg,
                                                      InitDiagnostics* diag = nullptr);

/// Additive smoothing used for the initial local proportions.
inline constexpr double kInitSmoothing = 0.5;

/// Base noise for the gamma draws of nu or lambda.
///  - quantile: values are probabilities u; draws are P^{-1}(shape, u), so they
///    move smoothly with the shape (used for common-random-number checks).
///  - standard: values are Gamma(shape, 1) draws taken at the current shape.
struct GammaNoise {
    enum class Kind { quantile, standard };
    Kind kind = Kind::standard;
    Tensor3 values;  // S x rows x D
    bool operator==(const GammaNoise&) const = default;
};

struct NoiseKey {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
};

/// Draws of every latent quantity plus the base noise that produced them.
struct DrawBatch {
    Matrix lambda;     // S x D
    Tensor3 nu;        // S x R x D
    Tensor3 gamma;     // S x M x D, sum of 1/nu over incident edges
    Tensor3 log_theta; // S x M x D
    Tensor3 normal;    // S x M x D standard normals
    Matrix lambda_std; // S x D standard gamma draws at shape lam0
    Tensor3 nu_std;    // S x R x D standard gamma draws at shape a

    std::size_t num_samples() const { return normal.dim0(); }
};

/// Samples normal and gamma base noise for S draws, one independent stream
/// per (sample, row) so the result is identical for any thread count.
void draw_base_noise(const VariationalParams& vp, std::size_t num_samples, NoiseKey key, Tensor3& normal,
                     GammaNoise& nu_noise, GammaNoise& lambda_noise);

/// Turns base noise into a DrawBatch for the configured family.
DrawBatch materialize_draws(const VariationalParams& vp, const SpatialGraph& graph, Family family,
                            const Tensor3& normal, const GammaNoise& nu_noise, const GammaNoise& lambda_noise);

/// Hierarchical family: nu ~ Gamma(a, b), gamma = (H+)^T nu^{-1},
/// log theta = mu + eps / sqrt(gamma).
DrawBatch sample_hierarchical(const VariationalParams& vp, const SpatialGraph& graph, const FamilyConfig& cfg,
                              NoiseKey key);

/// Mean-field family: log theta = mu + sigma eps; nu and lambda are still drawn.
DrawBatch sample_meanfield(const VariationalParams& vp, const SpatialGraph& graph, const FamilyConfig& cfg,
                           NoiseKey key);

/// Converts standard gamma noise to quantile noise at the current shapes.
GammaNoise to_quantile_noise(const GammaNoise& noise, std::span<const double> log_shape_flat, std::size_t rows);

/// Per-(pixel, molecule) quantiles of the relative rates theta~.
struct PosteriorSummary {
    std::vector<double> levels;
    Array3D<double> values;  // levels x M x D

    std::size_t level_index(double level) const;
    Matrix at_level(double level) const;
    Matrix median() const { return at_level(0.5); }
};

inline const std::vector<double> kDefaultQuantiles{0.05, 0.25, 0.5, 0.75, 0.95};

/// Draws log theta from the fitted family, maps every draw to theta~ (each
/// molecule normalized to sum one over pixels) and returns empirical quantiles
/// (linear interpolation between order statistics).
PosteriorSummary posterior_summary(const VariationalParams& vp, const SpatialGraph& graph, const FamilyConfig& cfg,
                                   std::size_t n_draws, const std::vector<double>& quantiles, std::uint64_t seed);

}  // namespace gfgl
