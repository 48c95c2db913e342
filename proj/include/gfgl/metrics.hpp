#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gfgl/array.hpp"
#include "gfgl/dataset.hpp"
#include "gfgl/simulator.hpp"
#include "gfgl/trainer.hpp"
#include "gfgl/variational.hpp"

namespace gfgl {

/// Per-pixel proportions x / N (censored entries count as 0), then each
/// molecule column rescaled to sum one over pixels.
Matrix tic_normalize(const CountDataset& ds);

enum class RmseScale { raw, standardized };

struct PerMolecule {
    std::vector<double> per_molecule;
    double overall = 0.0;
};

/// Standardized mode divides molecule d's errors by the standard deviation of
/// the truth column `b`; a column with (near) zero spread uses its mean instead.
PerMolecule rmse_relative(const Matrix& a, const Matrix& b, RmseScale scale);

/// Fraction of entries whose truth lies in the closed interval between the
/// (1-level)/2 and (1+level)/2 quantiles of the summary.
PerMolecule ci_coverage(const PosteriorSummary& summary, const Matrix& truth, double level);

struct SsimResult {
    double value = 0.0;
    /// True when the grid was smaller than the window and one global window was used.
    bool global_fallback = false;
};

/// Mean local SSIM over pixels of a (possibly masked) grid: 11x11 Gaussian
/// window with std 1.5, K1 = 0.01, K2 = 0.03, L = joint range of both images.
/// Window weights are renormalized over the in-mask pixels of each window.
SsimResult ssim(std::span<const double> a, std::span<const double> b, const SpatialGraph& graph);

/// SSIM per molecule column.
std::vector<SsimResult> ssim_columns(const Matrix& a, const Matrix& b, const SpatialGraph& graph);

/// SSIM of each molecule plus its quantiles over molecules.
struct SsimQuantileReport {
    std::vector<SsimResult> per_molecule;
    std::vector<double> levels;
    std::vector<double> quantiles;
    bool any_fallback = false;
};

SsimQuantileReport ssim_quantile_report(const Matrix& reference, const Matrix& estimate, const SpatialGraph& graph,
                                        const std::vector<double>& levels = {0.0, 0.25, 0.5, 0.75, 1.0});
std::string format_ssim_report(const SsimQuantileReport& report);

/// Type-7 quantiles of a sample.
std::vector<double> sample_quantiles(std::vector<double> values, const std::vector<double>& levels);

struct AblationRow {
    std::string method;
    PerMolecule rmse;
    bool has_coverage = false;
    PerMolecule coverage90;
    PerMolecule coverage50;
};

struct AblationReport {
    std::vector<std::string> molecules;
    RmseScale scale = RmseScale::standardized;
    std::vector<AblationRow> rows;
};

struct AblationOptions {
    TrainConfig train;
    std::size_t posterior_draws = 1000;
    RmseScale scale = RmseScale::standardized;
};

/// Scores one fitted model against the truth.
AblationRow score_fit(const std::string& method, const VariationalParams& vp, const FamilyConfig& cfg,
                      const CountDataset& ds, const Matrix& truth, std::size_t draws, std::uint64_t seed,
                      RmseScale scale);

/// Fits every configuration and reports RMSE (with a TIC row) and coverage.
AblationReport run_ablation_suite(const CountDataset& ds, const SimTruth& truth,
                                  const std::vector<FamilyConfig>& configs, const AblationOptions& opts);

/// Two tables: RMSE (methods incl. TIC) and 90% coverage with 50% in parentheses.
std::string format_ablation_text(const AblationReport& report);
void write_ablation_csv(const AblationReport& report, const std::filesystem::path& rmse_path,
                        const std::filesystem::path& coverage_path);

}  // namespace gfgl
