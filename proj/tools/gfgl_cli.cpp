// Command-line entry point: simulate, fit, evaluate, report.
#include <omp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "gfgl/config_json.hpp"
#include "gfgl/dataset.hpp"
#include "gfgl/errors.hpp"
#include "gfgl/metrics.hpp"
#include "gfgl/report.hpp"
#include "gfgl/simulator.hpp"
#include "gfgl/trainer.hpp"
#include "gfgl/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gfgl;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

struct Globals {
    std::uint64_t seed = 0;
    int threads = 0;
    bool verbose = false;
};

const char* kCounts = "counts.csv";
const char* kMeta = "meta.txt";
const char* kTruth = "truth.csv";
const char* kCheckpoint = "checkpoint.bin";

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config, std::uint64_t seed) {
    const std::string dumped = config.dump();
    json m{{"tool", "gfgl"},
           {"version", kVersion},
           {"command", command},
           {"seed", seed},
           {"config_hash", hex64(fnv1a(dumped))},
           {"config", config}};
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

void log_config(const std::string& command, const json& config) {
    spdlog::info("{} resolved config: {}", command, config.dump());
}

CountDataset load_data_dir(const fs::path& dir) { return load_dataset(dir / kCounts, dir / kMeta); }

// simulate ------------------------------------------------------------------

struct SimulateArgs {
    std::string preset;
    std::string spec_path;
    std::string out;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
    SimSpec spec;
    if (!a.spec_path.empty()) {
        spec = sim_spec_from_json(read_json(a.spec_path));
        spec.seed = g.seed;
    } else {
        spec = sim_preset(a.preset.empty() ? "paper-like" : a.preset, g.seed);
    }
    const json config = to_json(spec);
    log_config("simulate", config);
    const fs::path out(a.out);
    fs::create_directories(out);
    auto [ds, truth] = simulate(spec);
    save_dataset(ds, out / kCounts, out / kMeta);
    save_truth(truth, ds, out / kTruth);
    write_text(out / "spec.json", config.dump(2) + "\n");
    const auto cp = count_change_points(truth);
    for (std::size_t d = 0; d < ds.num_molecules(); ++d) {
        std::size_t cens = 0;
        for (std::size_t i = 0; i < ds.num_pixels(); ++i) cens += ds.observed()(i, d) ? 0 : 1;
        spdlog::info("molecule {}: {} change points, {:.1f}% censored", ds.molecule_names()[d], cp.per_molecule[d],
                     100.0 * static_cast<double>(cens) / static_cast<double>(ds.num_pixels()));
    }
    if (!cp.within_bound) spdlog::warn("change points exceed the identifiability bound M - M/D = {:.1f}", cp.bound);
    write_manifest(out, "simulate", config, g.seed);
    spdlog::info("wrote {} pixels x {} molecules to {}", ds.num_pixels(), ds.num_molecules(), out.string());
    return kOk;
}

// fit -----------------------------------------------------------------------

struct FitArgs {
    std::string data;
    std::string family = "hv-gfgl";
    std::size_t iters = 25000;
    double lr = 0.01;
    std::string out;
    std::string resume;
    std::size_t checkpoint_every = 1000;
    std::size_t draws = 1000;
    std::optional<std::size_t> samples_grad;
    std::optional<std::size_t> samples_cdf;
    std::string laplace_form;
    std::string coupling;
    std::optional<double> early_stop;
};

void write_posterior_csv(const PosteriorSummary& s, const CountDataset& ds, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "pixel_row,pixel_col,molecule";
    for (double q : s.levels) out << ",q" << std::setw(2) << std::setfill('0') << std::lround(q * 100);
    out << std::setfill(' ') << '\n' << std::setprecision(17);
    const auto coords = ds.graph().coordinates();
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        for (std::size_t d = 0; d < ds.num_molecules(); ++d) {
            out << coords[i].row << ',' << coords[i].col << ',' << ds.molecule_names()[d];
            for (std::size_t q = 0; q < s.levels.size(); ++q) out << ',' << s.values(q, i, d);
            out << '\n';
        }
    }
}

int cmd_fit(const Globals& g, const FitArgs& a) {
    const fs::path data(a.data);
    const fs::path out(a.out);
    const auto ds = load_data_dir(data);
    fs::create_directories(out);

    TrainState state;
    if (!a.resume.empty()) {
        state = load_checkpoint(a.resume);
        check_state_matches(state, ds);
        state.train.max_iters = a.iters;
        spdlog::info("resuming from {} at iteration {}", a.resume, state.iteration);
    } else {
        FamilyConfig fam = family_preset(a.family);
        if (a.samples_grad) fam.samples_grad = *a.samples_grad;
        if (a.samples_cdf) fam.samples_cdf = *a.samples_cdf;
        if (a.laplace_form == "rate") fam.laplace_form = LaplaceForm::rate;
        if (a.laplace_form == "scale") fam.laplace_form = LaplaceForm::scale;
        if (!a.coupling.empty()) fam.coupling = family_from_json([&] {
                                                    auto j = to_json(fam);
                                                    j["coupling"] = a.coupling;
                                                    return j;
                                                }())
                                                    .coupling;
        TrainConfig tc;
        tc.max_iters = a.iters;
        tc.learning_rate = a.lr;
        tc.seed = g.seed;
        tc.checkpoint_every = a.checkpoint_every;
        tc.early_stop_rel_tol = a.early_stop;
        InitDiagnostics diag;
        state = init_train_state(ds, fam, tc, &diag);
        for (const auto& w : diag.warnings) spdlog::warn("{}", w);
    }
    const json config{{"family", to_json(state.family)},
                      {"train", to_json(state.train)},
                      {"prior", to_json(state.prior)},
                      {"data", fs::absolute(data).lexically_normal().string()},
                      {"posterior_draws", a.draws}};
    log_config("fit", config);

    FitHooks hooks;
    hooks.checkpoint_path = out / kCheckpoint;
    const std::size_t log_every = std::max<std::size_t>(1, std::min<std::size_t>(1000, state.train.max_iters / 10));
    hooks.on_iteration = [&](const TrainState& s) {
        if (s.iteration % log_every == 0) {
            spdlog::info("iter {:>6}  elbo(avg {}) {:.4f}", s.iteration, s.train.elbo_window,
                         s.trace.window_mean(s.trace.rows.size(), s.train.elbo_window));
        }
    };
    train(ds, state, hooks);
    save_checkpoint(state, out / kCheckpoint);
    write_trace_csv(state.trace, out / "trace.csv");
    const auto summary =
        posterior_summary(state.params, ds.graph(), state.family, a.draws, kDefaultQuantiles, state.train.seed);
    write_posterior_csv(summary, ds, out / "posterior_summary.csv");
    write_text(out / "fit.json", config.dump(2) + "\n");
    write_manifest(out, "fit", config, state.train.seed);
    spdlog::info("fit finished after {} iterations; outputs in {}", state.iteration, out.string());
    return kOk;
}

// evaluate / report ---------------------------------------------------------

struct LoadedFit {
    json config;
    CountDataset ds;
    TrainState state;
    PosteriorSummary summary;
};

LoadedFit load_fit(const fs::path& dir) {
    LoadedFit f;
    f.config = read_json(dir / "fit.json");
    f.ds = load_data_dir(f.config.at("data").get<std::string>());
    f.state = load_checkpoint(dir / kCheckpoint);
    check_state_matches(f.state, f.ds);
    f.summary = posterior_summary(f.state.params, f.ds.graph(), f.state.family,
                                  f.config.at("posterior_draws").get<std::size_t>(), kDefaultQuantiles,
                                  f.state.train.seed);
    return f;
}

struct EvaluateArgs {
    std::string fit;
    std::string truth;
    bool tic = false;
    std::string out;
    std::string scale = "standardized";
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
    const fs::path fit_dir(a.fit);
    const fs::path out = a.out.empty() ? fit_dir / "evaluation" : fs::path(a.out);
    auto f = load_fit(fit_dir);
    const json config{{"fit", fs::absolute(fit_dir).lexically_normal().string()},
                      {"truth", a.truth},
                      {"tic", a.tic},
                      {"scale", a.scale}};
    log_config("evaluate", config);
    fs::create_directories(out);
    const auto& names = f.ds.molecule_names();
    const auto tic = tic_normalize(f.ds);
    const auto median = f.summary.median();
    std::string text;

    if (!a.truth.empty()) {
        const auto truth = load_truth(a.truth, f.ds);
        AblationReport rep;
        rep.molecules = names;
        rep.scale = a.scale == "raw" ? RmseScale::raw : RmseScale::standardized;
        if (a.tic) {
            AblationRow row;
            row.method = "TIC";
            row.rmse = rmse_relative(tic, truth.theta_tilde, rep.scale);
            rep.rows.push_back(row);
        }
        AblationRow row;
        row.method = family_name(f.state.family);
        row.rmse = rmse_relative(median, truth.theta_tilde, rep.scale);
        row.has_coverage = true;
        row.coverage90 = ci_coverage(f.summary, truth.theta_tilde, 0.9);
        row.coverage50 = ci_coverage(f.summary, truth.theta_tilde, 0.5);
        rep.rows.push_back(row);
        write_ablation_csv(rep, out / "rmse.csv", out / "coverage.csv");
        text += format_ablation_text(rep) + "\n";
    }

    const auto sr = ssim_quantile_report(tic, median, f.ds.graph());
    if (sr.any_fallback) spdlog::warn("grid smaller than the 11x11 SSIM window; used one global window per molecule");
    std::ofstream ss(out / "ssim.csv");
    ss << "molecule,ssim_tic_vs_model,global_fallback\n" << std::setprecision(10);
    for (std::size_t d = 0; d < sr.per_molecule.size(); ++d) {
        ss << names[d] << ',' << sr.per_molecule[d].value << ',' << (sr.per_molecule[d].global_fallback ? 1 : 0) << '\n';
    }
    std::ofstream sq(out / "ssim_quantiles.csv");
    sq << "quantile,ssim\n" << std::setprecision(10);
    for (std::size_t k = 0; k < sr.levels.size(); ++k) sq << sr.levels[k] << ',' << sr.quantiles[k] << '\n';
    text += format_ssim_report(sr);
    write_text(out / "report.txt", text);
    std::cout << text;
    write_manifest(out, "evaluate", config, g.seed);
    return kOk;
}

struct ReportArgs {
    std::string fit;
    std::string out;
    std::string truth;
    std::size_t cell_px = 8;
};

int cmd_report(const Globals& g, const ReportArgs& a) {
    const fs::path fit_dir(a.fit);
    auto f = load_fit(fit_dir);
    const json config{{"fit", fs::absolute(fit_dir).lexically_normal().string()}, {"truth", a.truth}, {"cell_px", a.cell_px}};
    log_config("report", config);
    std::vector<NamedField> fields;
    if (!a.truth.empty()) fields.push_back({"truth", load_truth(a.truth, f.ds).theta_tilde});
    fields.push_back({"tic", tic_normalize(f.ds)});
    fields.push_back({"posterior_median", f.summary.median()});
    const auto written = write_report(fields, f.ds.molecule_names(), f.ds.graph(), a.out, a.cell_px);
    write_manifest(a.out, "report", config, g.seed);
    spdlog::info("wrote {} files to {}", written.size(), a.out);
    return kOk;
}

void setup_logging(bool verbose) {
    auto logger = spdlog::stderr_color_mt("gfgl");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("GFGL_LOG")) {
        const std::string v(env);
        if (v == "error") spdlog::set_level(spdlog::level::err);
        else if (v == "warn") spdlog::set_level(spdlog::level::warn);
        else if (v == "info") spdlog::set_level(spdlog::level::info);
        else if (v == "debug") spdlog::set_level(spdlog::level::debug);
        else spdlog::warn("ignoring GFGL_LOG={} (expected error, warn, info or debug)", v);
    }
    if (verbose) spdlog::set_level(spdlog::level::debug);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatial relative-rate estimation for imaging count data"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
    app.add_flag("-v,--verbose", g.verbose, "Debug logging");

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset with known rates");
    auto* preset = sim->add_option("--preset", sa.preset, "Built-in spec: paper-like, two-region");
    auto* spec = sim->add_option("--spec", sa.spec_path, "JSON simulation spec")->check(CLI::ExistingFile);
    preset->excludes(spec);
    sim->add_option("--out", sa.out, "Output directory")->required();

    FitArgs fa;
    auto* fitc = app.add_subcommand("fit", "Fit the variational posterior");
    fitc->add_option("--data", fa.data, "Dataset directory (counts.csv, meta.txt)")->required()->check(CLI::ExistingDirectory);
    fitc->add_option("--family", fa.family, "hv-gfgl, mf-gfgl or mf-gfl")
        ->capture_default_str()
        ->check(CLI::IsMember({"hv-gfgl", "mf-gfgl", "mf-gfl"}));
    fitc->add_option("--iters", fa.iters, "Total iterations")->capture_default_str();
    fitc->add_option("--lr", fa.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    fitc->add_option("--out", fa.out, "Output directory")->required();
    fitc->add_option("--resume", fa.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
    fitc->add_option("--checkpoint-every", fa.checkpoint_every, "Iterations between checkpoints (0: only at the end)")
        ->capture_default_str();
    fitc->add_option("--draws", fa.draws, "Posterior draws for the summary")->capture_default_str()->check(CLI::Range(100, 1000000));
    fitc->add_option("--samples-grad", fa.samples_grad, "Monte Carlo samples per gradient");
    fitc->add_option("--samples-cdf", fa.samples_cdf, "Draws per censored-term estimate");
    fitc->add_option("--laplace-form", fa.laplace_form, "Edge prior parameterization")->check(CLI::IsMember({"scale", "rate"}));
    fitc->add_option("--coupling", fa.coupling, "Penalty estimator")
        ->check(CLI::IsMember({"automatic", "shared_draws", "closed_form", "cross_product"}));
    fitc->add_option("--early-stop", fa.early_stop, "Relative ELBO tolerance between windows");

    EvaluateArgs ea;
    auto* eval = app.add_subcommand("evaluate", "Score a fit: RMSE and coverage against truth, SSIM against TIC");
    eval->add_option("--fit", ea.fit, "Fit directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--truth", ea.truth, "Truth CSV from simulate")->check(CLI::ExistingFile);
    eval->add_flag("--tic", ea.tic, "Include the TIC baseline in the RMSE table");
    eval->add_option("--out", ea.out, "Output directory (default: <fit>/evaluation)");
    eval->add_option("--scale", ea.scale, "RMSE convention")->capture_default_str()->check(CLI::IsMember({"raw", "standardized"}));

    ReportArgs ra;
    auto* rep = app.add_subcommand("report", "Heatmaps and CSV grids per molecule");
    rep->add_option("--fit", ra.fit, "Fit directory")->required()->check(CLI::ExistingDirectory);
    rep->add_option("--out", ra.out, "Output directory")->required();
    rep->add_option("--truth", ra.truth, "Truth CSV from simulate")->check(CLI::ExistingFile);
    rep->add_option("--cell-px", ra.cell_px, "Pixels per grid cell")->capture_default_str()->check(CLI::Range(1, 64));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        setup_logging(g.verbose);
        if (g.threads > 0) omp_set_num_threads(g.threads);
        if (*sim) return cmd_simulate(g, sa);
        if (*fitc) return cmd_fit(g, fa);
        if (*eval) return cmd_evaluate(g, ea);
        if (*rep) return cmd_report(g, ra);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kUsage;
    } catch (const NumericalError& e) {
        spdlog::error("numerical failure: {}", e.what());
        return kNumerical;
    } catch (const DomainError& e) {
        spdlog::error("numerical failure: {}", e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kData;
    }
    return kUsage;
}
