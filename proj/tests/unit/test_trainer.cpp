#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "gfgl/errors.hpp"
#include "gfgl/simulator.hpp"
#include "gfgl/trainer.hpp"

using namespace gfgl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("gfgl_trainer_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

const CountDataset& small_dataset() {
    static const auto ds = [] {
        auto spec = sim_preset("two-region", 4);
        spec.rows = 5;
        spec.cols = 6;
        spec.lod = {0, 0, 60};
        spec.regions[0].height = 5;
        spec.regions[0].width = 3;
        return simulate(spec).first;
    }();
    return ds;
}

TrainConfig short_run(std::size_t iters) {
    TrainConfig tc;
    tc.max_iters = iters;
    tc.seed = 17;
    return tc;
}

}  // namespace

TEST(Trainer, SmallDatasetHasCensoring) { EXPECT_GT(small_dataset().num_censored(), 0u); }

TEST(Trainer, CheckpointRoundTrip) {
    TempDir dir;
    auto st = init_train_state(small_dataset(), family_preset("hv-gfgl"), short_run(15));
    train(small_dataset(), st);
    save_checkpoint(st, dir.path / "c.bin");
    const auto back = load_checkpoint(dir.path / "c.bin");
    EXPECT_EQ(back.family, st.family);
    EXPECT_EQ(back.train, st.train);
    EXPECT_EQ(back.prior, st.prior);
    EXPECT_EQ(back.params, st.params);
    EXPECT_EQ(back.adam_m, st.adam_m);
    EXPECT_EQ(back.adam_v, st.adam_v);
    EXPECT_EQ(back.iteration, 15u);
    EXPECT_EQ(back.consecutive_failures, st.consecutive_failures);
    ASSERT_EQ(back.trace.rows.size(), st.trace.rows.size());
    for (std::size_t k = 0; k < st.trace.rows.size(); ++k) {
        EXPECT_EQ(back.trace.rows[k].iter, st.trace.rows[k].iter);
        EXPECT_EQ(back.trace.rows[k].terms.total, st.trace.rows[k].terms.total);
        EXPECT_EQ(back.trace.rows[k].terms.kl_nu, st.trace.rows[k].terms.kl_nu);
    }
    EXPECT_NO_THROW(check_state_matches(back, small_dataset()));
}

TEST(Trainer, IdenticalSeedsGiveIdenticalCheckpointBytes) {
    TempDir dir;
    for (const char* name : {"a.bin", "b.bin"}) {
        auto st = init_train_state(small_dataset(), family_preset("hv-gfgl"), short_run(10));
        train(small_dataset(), st);
        save_checkpoint(st, dir.path / name);
    }
    EXPECT_EQ(slurp(dir.path / "a.bin"), slurp(dir.path / "b.bin"));
}

TEST(Trainer, DamagedCheckpointsAreRejected) {
    TempDir dir;
    auto st = init_train_state(small_dataset(), family_preset("mf-gfgl"), short_run(3));
    train(small_dataset(), st);
    const auto good = dir.path / "good.bin";
    save_checkpoint(st, good);
    const auto bytes = slurp(good);

    for (std::size_t keep : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        spit(dir.path / "t.bin", bytes.substr(0, keep));
        EXPECT_THROW(load_checkpoint(dir.path / "t.bin"), CheckpointError) << "kept " << keep;
    }

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x40;
    spit(dir.path / "f.bin", flipped);
    EXPECT_THROW(load_checkpoint(dir.path / "f.bin"), CheckpointError);

    auto versioned = bytes;
    versioned[8] = static_cast<char>(kCheckpointVersion + 1);
    spit(dir.path / "v.bin", versioned);
    try {
        load_checkpoint(dir.path / "v.bin");
        FAIL() << "expected a version error";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
    }

    EXPECT_THROW(load_checkpoint(dir.path / "missing.bin"), CheckpointError);
}

TEST(Trainer, StateForOtherDimensionsIsRejected) {
    auto st = init_train_state(small_dataset(), family_preset("hv-gfgl"), short_run(1));
    auto spec = sim_preset("two-region", 4);
    const auto other = simulate(spec).first;  // 8x8 instead of 5x6
    EXPECT_THROW(check_state_matches(st, other), DimensionError);
    EXPECT_THROW(train(other, st), DimensionError);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
    TempDir dir;
    for (const char* preset : {"hv-gfgl", "mf-gfl"}) {
        auto full = init_train_state(small_dataset(), family_preset(preset), short_run(40));
        train(small_dataset(), full);

        auto part = init_train_state(small_dataset(), family_preset(preset), short_run(17));
        train(small_dataset(), part);
        save_checkpoint(part, dir.path / "p.bin");
        auto resumed = load_checkpoint(dir.path / "p.bin");
        resumed.train.max_iters = 40;
        train(small_dataset(), resumed);

        EXPECT_EQ(resumed.params, full.params) << preset;
        EXPECT_EQ(resumed.adam_v, full.adam_v) << preset;
        ASSERT_EQ(resumed.trace.rows.size(), 40u);
        EXPECT_EQ(resumed.trace.rows.back().terms.total, full.trace.rows.back().terms.total);
    }
}

TEST(Trainer, PeriodicCheckpointsAreWritten) {
    TempDir dir;
    auto tc = short_run(12);
    tc.checkpoint_every = 5;
    auto st = init_train_state(small_dataset(), family_preset("hv-gfgl"), tc);
    std::size_t calls = 0;
    FitHooks hooks;
    hooks.checkpoint_path = dir.path / "ck.bin";
    hooks.on_iteration = [&](const TrainState&) { ++calls; };
    train(small_dataset(), st, hooks);
    EXPECT_EQ(calls, 12u);
    const auto back = load_checkpoint(dir.path / "ck.bin");
    EXPECT_EQ(back.iteration, 10u);
    ASSERT_EQ(back.trace.rng_digests.size(), 2u);
    EXPECT_EQ(back.trace.rng_digests[1].second, rng_digest(tc.seed, 10));
}

TEST(Trainer, ThreadCountDoesNotChangeTheResult) {
    const int before = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto one = fit(small_dataset(), family_preset("hv-gfgl"), short_run(20));
    omp_set_num_threads(4);
    const auto four = fit(small_dataset(), family_preset("hv-gfgl"), short_run(20));
    omp_set_num_threads(before);
    EXPECT_EQ(one.params, four.params);
}

TEST(Trainer, ElboRisesOnTwoRegionPreset) {
    const auto ds = simulate(sim_preset("two-region", 1)).first;
    auto tc = short_run(5000);
    const auto res = fit(ds, family_preset("hv-gfgl"), tc);
    ASSERT_EQ(res.trace.rows.size(), 5000u);
    const double early = res.trace.window_mean(200, 200);
    const double late = res.trace.window_mean(5000, 200);
    EXPECT_GT(late, early);
    for (const auto& row : res.trace.rows) ASSERT_TRUE(row.finite) << row.iter;
}

TEST(Trainer, SingleMoleculeDatasetTrains) {
    auto spec = sim_preset("two-region", 2);
    spec.num_molecules = 1;
    spec.base_log_rate = {0.0};
    spec.regions.clear();
    spec.lod = {0};
    spec.names.clear();
    const auto ds = simulate(spec).first;
    const auto res = fit(ds, family_preset("hv-gfgl"), short_run(50));
    EXPECT_EQ(res.params.num_molecules(), 1u);
    for (const auto& row : res.trace.rows) {
        EXPECT_TRUE(std::isfinite(row.terms.total));
        EXPECT_EQ(row.terms.loglik_obs, 0.0);  // one molecule: every proportion is one
    }
}

TEST(Trainer, PersistentNonFiniteElboStopsWithDiagnostic) {
    TempDir dir;
    auto st = init_train_state(small_dataset(), family_preset("hv-gfgl"), short_run(100));
    st.params.mu(0, 0) = std::nan("");
    FitHooks hooks;
    hooks.checkpoint_path = dir.path / "ck.bin";
    EXPECT_THROW(train(small_dataset(), st, hooks), NumericalError);
    EXPECT_EQ(st.iteration, 10u);
    EXPECT_TRUE(fs::exists(dir.path / "ck.bin.diagnostic"));
}

TEST(Trainer, InvalidConfigIsRejected) {
    auto tc = short_run(10);
    tc.learning_rate = -1.0;
    EXPECT_THROW(tc.validate(), ConfigError);
    tc = short_run(10);
    tc.beta2 = 1.0;
    EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(Trainer, TraceCsvHasOneRowPerIteration) {
    TempDir dir;
    const auto res = fit(small_dataset(), family_preset("mf-gfgl"), short_run(7));
    write_trace_csv(res.trace, dir.path / "trace.csv");
    std::ifstream in(dir.path / "trace.csv");
    std::string header, line;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("iter,elbo,", 0), 0u);
    std::size_t n = 0;
    while (std::getline(in, line)) ++n;
    EXPECT_EQ(n, 7u);
}
