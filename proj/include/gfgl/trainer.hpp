#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gfgl/elbo.hpp"
#include "gfgl/priors.hpp"
#include "gfgl/variational.hpp"

namespace gfgl {

struct TrainConfig {
    std::size_t max_iters = 25000;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// 0 disables periodic checkpoints.
    std::size_t checkpoint_every = 0;
    std::uint64_t seed = 0;
    std::size_t elbo_window = 200;
    /// Stop when consecutive window means differ by less than this fraction.
    std::optional<double> early_stop_rel_tol;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct TraceRow {
    std::size_t iter = 0;
    ElboBreakdown terms;
    bool finite = true;
    double seconds = 0.0;
};

struct TrainTrace {
    std::vector<TraceRow> rows;
    /// (iteration, digest of the RNG stream used at that iteration) per checkpoint.
    std::vector<std::pair<std::size_t, std::uint64_t>> rng_digests;

    /// Mean ELBO over the last `window` finite rows ending at row `end` (exclusive).
    double window_mean(std::size_t end, std::size_t window) const;
};

/// Everything needed to continue training exactly where it stopped.
struct TrainState {
    FamilyConfig family;
    TrainConfig train;
    PriorConfig prior;
    VariationalParams params;
    VariationalParams adam_m;
    VariationalParams adam_v;
    std::size_t iteration = 0;
    std::size_t consecutive_failures = 0;
    TrainTrace trace;
};

/// Digest of the noise stream used at iteration `iter`.
std::uint64_t rng_digest(std::uint64_t seed, std::size_t iter);

/// Fresh state from the data-scaled initialization.
TrainState init_train_state(const CountDataset& ds, const FamilyConfig& fam, const TrainConfig& tc,
                            InitDiagnostics* diag = nullptr);

struct FitHooks {
    /// Called after every iteration with the current state.
    std::function<void(const TrainState&)> on_iteration;
    /// Destination of periodic and diagnostic checkpoints; empty disables them.
    std::filesystem::path checkpoint_path;
};

/// Runs Adam ascent on the ELBO until state.train.max_iters (or early stop).
/// The noise at iteration t depends only on (seed, t), so the result does not
/// depend on where training was interrupted or on the thread count.
void train(const CountDataset& ds, TrainState& state, const FitHooks& hooks = {});

struct FitResult {
    VariationalParams params;
    PriorConfig prior;
    TrainTrace trace;
};

FitResult fit(const CountDataset& ds, const FamilyConfig& fam, const TrainConfig& tc);

/// Throws DimensionError when the state does not fit the dataset.
void check_state_matches(const TrainState& state, const CountDataset& ds);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

/// iter,elbo,loglik_obs,...,seconds
void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path);

}  // namespace gfgl
