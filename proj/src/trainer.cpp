#include "gfgl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "gfgl/config_json.hpp"
#include "gfgl/errors.hpp"
#include "gfgl/rng.hpp"

namespace gfgl {

namespace {

constexpr char kMagic[8] = {'G', 'F', 'G', 'L', 'C', 'K', 'P', 'T'};
constexpr std::size_t kMaxConsecutiveFailures = 10;

std::vector<std::pair<std::string, std::vector<double>>> flatten(const VariationalParams& vp, const char* prefix) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    vp.visit([&](std::string_view name, std::span<const double> v) {
        out.emplace_back(std::string(prefix) + std::string(name), std::vector<double>(v.begin(), v.end()));
    });
    return out;
}

template <class T>
void put(std::string& buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

class Reader {
  public:
    explicit Reader(std::string_view data) : data_(data) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

  private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

void adam_step(std::span<double> x, std::span<const double> g, std::span<double> m, std::span<double> v,
               const TrainConfig& tc, double bc1, double bc2) {
    for (std::size_t k = 0; k < x.size(); ++k) {
        m[k] = tc.beta1 * m[k] + (1.0 - tc.beta1) * g[k];
        v[k] = tc.beta2 * v[k] + (1.0 - tc.beta2) * g[k] * g[k];
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        x[k] += tc.learning_rate * mhat / (std::sqrt(vhat) + tc.epsilon);
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("Adam decay rates must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (elbo_window == 0) throw ConfigError("elbo_window must be positive");
    if (early_stop_rel_tol && !(*early_stop_rel_tol > 0.0)) throw ConfigError("early_stop_rel_tol must be positive");
}

double TrainTrace::window_mean(std::size_t end, std::size_t window) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = end; k > 0 && n < window; --k) {
        if (!rows[k - 1].finite) continue;
        sum += rows[k - 1].terms.total;
        ++n;
    }
    return n == 0 ? std::nan("") : sum / static_cast<double>(n);
}

std::uint64_t rng_digest(std::uint64_t seed, std::size_t iter) {
    auto rng = Rng::stream(seed, {iter});
    return rng();
}

TrainState init_train_state(const CountDataset& ds, const FamilyConfig& fam, const TrainConfig& tc,
                            InitDiagnostics* diag) {
    fam.validate();
    tc.validate();
    TrainState st;
    st.family = fam;
    st.train = tc;
    auto [vp, prior] = init_params(ds, fam, diag);
    st.params = std::move(vp);
    st.prior = std::move(prior);
    st.adam_m = st.params.zeros_like();
    st.adam_v = st.params.zeros_like();
    return st;
}

void check_state_matches(const TrainState& state, const CountDataset& ds) {
    const auto& p = state.params;
    const auto& g = ds.graph();
    if (p.num_vertices() != g.num_vertices() || p.num_edges() != g.num_edges() ||
        p.num_molecules() != ds.num_molecules()) {
        std::ostringstream os;
        os << "checkpoint shape (M=" << p.num_vertices() << ", R=" << p.num_edges() << ", D=" << p.num_molecules()
           << ") does not match the dataset (M=" << g.num_vertices() << ", R=" << g.num_edges()
           << ", D=" << ds.num_molecules() << ")";
        throw DimensionError(os.str());
    }
    if (state.prior.tau.size() != ds.num_molecules()) throw DimensionError("checkpoint prior has the wrong width");
}

void train(const CountDataset& ds, TrainState& state, const FitHooks& hooks) {
    check_state_matches(state, ds);
    const TrainConfig& tc = state.train;
    tc.validate();
    const ElboProblem problem(ds, state.prior, state.family);
    VariationalParams grad = state.params.zeros_like();
    using clock = std::chrono::steady_clock;

    while (state.iteration < tc.max_iters) {
        const auto t0 = clock::now();
        const std::size_t t = state.iteration;
        TraceRow row;
        row.iter = t;
        try {
            row.terms = elbo_grad(problem, state.params, NoiseKey{tc.seed, t}, grad);
        } catch (const NumericalError& e) {
            row.finite = false;
            row.terms.total = std::nan("");
        }

        if (row.finite) {
            state.consecutive_failures = 0;
            const double step = static_cast<double>(t + 1);
            const double bc1 = 1.0 - std::pow(tc.beta1, step);
            const double bc2 = 1.0 - std::pow(tc.beta2, step);
            std::size_t k = 0;
            std::vector<std::span<const double>> gs;
            grad.visit([&](std::string_view, std::span<const double> v) { gs.push_back(v); });
            std::vector<std::span<double>> ms;
            std::vector<std::span<double>> vs;
            state.adam_m.visit([&](std::string_view, std::span<double> v) { ms.push_back(v); });
            state.adam_v.visit([&](std::string_view, std::span<double> v) { vs.push_back(v); });
            state.params.visit([&](std::string_view name, std::span<double> x) {
                adam_step(x, gs[k], ms[k], vs[k], tc, bc1, bc2);
                for (double v : x) {
                    if (!std::isfinite(v) || (name != "mu" && !(std::exp(v) > 0.0))) {
                        throw NumericalError("parameter " + std::string(name) + " left its domain after step " +
                                             std::to_string(t));
                    }
                }
                ++k;
            });
        } else {
            ++state.consecutive_failures;
        }
        row.seconds = std::chrono::duration<double>(clock::now() - t0).count();
        state.trace.rows.push_back(row);
        state.iteration = t + 1;

        if (state.consecutive_failures >= kMaxConsecutiveFailures) {
            if (!hooks.checkpoint_path.empty()) {
                auto diag_path = hooks.checkpoint_path;
                diag_path += ".diagnostic";
                save_checkpoint(state, diag_path);
            }
            throw NumericalError("ELBO was non-finite for " + std::to_string(kMaxConsecutiveFailures) +
                                 " consecutive iterations (last at " + std::to_string(t) + ")");
        }
        if (tc.checkpoint_every > 0 && state.iteration % tc.checkpoint_every == 0 && !hooks.checkpoint_path.empty()) {
            state.trace.rng_digests.emplace_back(state.iteration, rng_digest(tc.seed, state.iteration));
            save_checkpoint(state, hooks.checkpoint_path);
        }
        if (hooks.on_iteration) hooks.on_iteration(state);

        if (tc.early_stop_rel_tol && state.iteration % tc.elbo_window == 0 &&
            state.iteration >= 2 * tc.elbo_window) {
            const double now = state.trace.window_mean(state.trace.rows.size(), tc.elbo_window);
            const double before = state.trace.window_mean(state.trace.rows.size() - tc.elbo_window, tc.elbo_window);
            if (std::abs(now - before) < *tc.early_stop_rel_tol * std::abs(before)) break;
        }
    }
}

FitResult fit(const CountDataset& ds, const FamilyConfig& fam, const TrainConfig& tc) {
    auto state = init_train_state(ds, fam, tc);
    train(ds, state, {});
    return {std::move(state.params), std::move(state.prior), std::move(state.trace)};
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    nlohmann::json header{{"family", to_json(state.family)},
                          {"train", to_json(state.train)},
                          {"prior", to_json(state.prior)},
                          {"iteration", state.iteration},
                          {"consecutive_failures", state.consecutive_failures},
                          {"dims",
                           {{"vertices", state.params.num_vertices()},
                            {"edges", state.params.num_edges()},
                            {"molecules", state.params.num_molecules()}}}};
    nlohmann::json digests = nlohmann::json::array();
    for (const auto& [it, dg] : state.trace.rng_digests) digests.push_back({it, hex64(dg)});
    header["rng_digests"] = digests;
    const std::string header_text = header.dump();

    auto tensors = flatten(state.params, "param.");
    for (auto& t : flatten(state.adam_m, "adam_m.")) tensors.push_back(std::move(t));
    for (auto& t : flatten(state.adam_v, "adam_v.")) tensors.push_back(std::move(t));
    // Trace without wall-clock times, so identical runs give identical files.
    const std::size_t n = state.trace.rows.size();
    std::vector<double> trace_iter(n), trace_finite(n), trace_terms(n * 7);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& r = state.trace.rows[k];
        trace_iter[k] = static_cast<double>(r.iter);
        trace_finite[k] = r.finite ? 1.0 : 0.0;
        const double vals[7] = {r.terms.loglik_obs, r.terms.loglik_censor, r.terms.prior_alpha, r.terms.entropy_theta,
                                r.terms.kl_nu,      r.terms.kl_lambda,     static_cast<double>(r.terms.censor_floors)};
        std::copy(vals, vals + 7, trace_terms.begin() + static_cast<std::ptrdiff_t>(7 * k));
    }
    tensors.emplace_back("trace.iter", std::move(trace_iter));
    tensors.emplace_back("trace.finite", std::move(trace_finite));
    tensors.emplace_back("trace.terms", std::move(trace_terms));

    std::string buf(kMagic, sizeof kMagic);
    put<std::uint32_t>(buf, kCheckpointVersion);
    put<std::uint64_t>(buf, header_text.size());
    buf += header_text;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, vals] : tensors) {
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        put<std::uint64_t>(buf, vals.size());
        for (double v : vals) put<double>(buf, v);
    }
    put<std::uint64_t>(buf, fnv1a(buf));

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof kMagic + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
        if (buf.size() >= sizeof kMagic && std::memcmp(buf.data(), kMagic, sizeof kMagic) == 0) {
            throw CheckpointError("checkpoint is truncated");
        }
        throw CheckpointError("not a checkpoint file: " + path.string());
    }
    Reader rd(buf);
    rd.bytes(sizeof kMagic);
    const auto version = rd.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    std::uint64_t stored_sum;
    std::memcpy(&stored_sum, buf.data() + buf.size() - 8, 8);
    if (fnv1a(std::string_view(buf).substr(0, buf.size() - 8)) != stored_sum) {
        throw CheckpointError("checkpoint is truncated or corrupt (checksum mismatch)");
    }
    Reader body(std::string_view(buf).substr(0, buf.size() - 8));
    body.bytes(sizeof kMagic + 4);

    TrainState st;
    try {
        const auto header_len = body.get<std::uint64_t>();
        const auto header = nlohmann::json::parse(body.bytes(header_len));
        st.family = family_from_json(header.at("family"));
        st.train = train_from_json(header.at("train"));
        st.prior = prior_from_json(header.at("prior"));
        st.iteration = header.at("iteration").get<std::size_t>();
        st.consecutive_failures = header.at("consecutive_failures").get<std::size_t>();
        const auto& dims = header.at("dims");
        const auto m = dims.at("vertices").get<std::size_t>();
        const auto r = dims.at("edges").get<std::size_t>();
        const auto d = dims.at("molecules").get<std::size_t>();
        for (const auto& e : header.at("rng_digests")) {
            st.trace.rng_digests.emplace_back(e.at(0).get<std::size_t>(),
                                              std::stoull(e.at(1).get<std::string>(), nullptr, 16));
        }
        st.params = VariationalParams(m, r, d);
        st.adam_m = VariationalParams(m, r, d);
        st.adam_v = VariationalParams(m, r, d);

        std::map<std::string, std::vector<double>> tensors;
        const auto count = body.get<std::uint32_t>();
        for (std::uint32_t k = 0; k < count; ++k) {
            const auto name_len = body.get<std::uint32_t>();
            std::string name(body.bytes(name_len));
            const auto len = body.get<std::uint64_t>();
            if (len > buf.size() / 8) throw CheckpointError("checkpoint tensor " + name + " is truncated");
            std::vector<double> vals(len);
            for (auto& v : vals) v = body.get<double>();
            tensors[name] = std::move(vals);
        }
        if (!body.done()) throw CheckpointError("checkpoint has trailing bytes");

        auto fill = [&](VariationalParams& vp, const std::string& prefix) {
            vp.visit([&](std::string_view name, std::span<double> v) {
                const auto it = tensors.find(prefix + std::string(name));
                if (it == tensors.end()) throw CheckpointError("checkpoint lacks tensor " + prefix + std::string(name));
                if (it->second.size() != v.size()) {
                    throw DimensionError("checkpoint tensor " + it->first + " has " +
                                         std::to_string(it->second.size()) + " values, expected " +
                                         std::to_string(v.size()));
                }
                std::copy(it->second.begin(), it->second.end(), v.begin());
            });
        };
        fill(st.params, "param.");
        fill(st.adam_m, "adam_m.");
        fill(st.adam_v, "adam_v.");

        const auto& iters = tensors.at("trace.iter");
        const auto& finite = tensors.at("trace.finite");
        const auto& terms = tensors.at("trace.terms");
        if (finite.size() != iters.size() || terms.size() != 7 * iters.size()) {
            throw CheckpointError("checkpoint trace tensors disagree in length");
        }
        st.trace.rows.resize(iters.size());
        for (std::size_t k = 0; k < iters.size(); ++k) {
            auto& row = st.trace.rows[k];
            row.iter = static_cast<std::size_t>(iters[k]);
            row.finite = finite[k] != 0.0;
            const double* t = &terms[7 * k];
            row.terms.loglik_obs = t[0];
            row.terms.loglik_censor = t[1];
            row.terms.prior_alpha = t[2];
            row.terms.entropy_theta = t[3];
            row.terms.kl_nu = t[4];
            row.terms.kl_lambda = t[5];
            row.terms.censor_floors = static_cast<std::size_t>(t[6]);
            if (row.finite) {
                row.terms.finalize();
            } else {
                row.terms.total = std::nan("");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is corrupt: ") + e.what());
    } catch (const std::out_of_range&) {
        throw CheckpointError("checkpoint lacks trace tensors");
    }
    return st;
}

void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write trace " + path.string());
    out << "iter,elbo,loglik_obs,loglik_censor,prior_alpha,entropy_theta,kl_nu,kl_lambda,censor_floors,seconds\n";
    out << std::setprecision(17);
    for (const auto& r : trace.rows) {
        const auto& t = r.terms;
        out << r.iter << ',' << t.total << ',' << t.loglik_obs << ',' << t.loglik_censor << ',' << t.prior_alpha << ','
            << t.entropy_theta << ',' << t.kl_nu << ',' << t.kl_lambda << ',' << t.censor_floors << ','
            << std::setprecision(6) << r.seconds << std::setprecision(17) << '\n';
    }
}

}  // namespace gfgl
