#include "gfgl/config_json.hpp"

#include <cstdio>

#include "gfgl/errors.hpp"

namespace gfgl {

using nlohmann::json;

namespace {

template <class E>
struct Names;

template <>
struct Names<Family> {
    static constexpr std::pair<Family, const char*> table[] = {{Family::hierarchical, "hierarchical"},
                                                               {Family::mean_field, "mean_field"}};
};
template <>
struct Names<PriorKind> {
    static constexpr std::pair<PriorKind, const char*> table[] = {{PriorKind::gamma_lasso, "gamma_lasso"},
                                                                  {PriorKind::plain_lasso, "plain_lasso"}};
};
template <>
struct Names<LaplaceForm> {
    static constexpr std::pair<LaplaceForm, const char*> table[] = {{LaplaceForm::scale, "scale"},
                                                                    {LaplaceForm::rate, "rate"}};
};
template <>
struct Names<PenaltyCoupling> {
    static constexpr std::pair<PenaltyCoupling, const char*> table[] = {
        {PenaltyCoupling::automatic, "automatic"},
        {PenaltyCoupling::shared_draws, "shared_draws"},
        {PenaltyCoupling::closed_form, "closed_form"},
        {PenaltyCoupling::cross_product, "cross_product"}};
};
template <>
struct Names<KlNuExpectation> {
    static constexpr std::pair<KlNuExpectation, const char*> table[] = {{KlNuExpectation::closed_form, "closed_form"},
                                                                        {KlNuExpectation::sampled, "sampled"}};
};

template <class E>
std::string name_of(E e) {
    for (const auto& [v, n] : Names<E>::table) {
        if (v == e) return n;
    }
    throw ConfigError("unnamed enum value");
}

template <class E>
E parse_enum(const json& j, const char* key) {
    const auto s = j.at(key).get<std::string>();
    for (const auto& [v, n] : Names<E>::table) {
        if (s == n) return v;
    }
    throw ConfigError(std::string("unknown value '") + s + "' for " + key);
}

}  // namespace

json to_json(const FamilyConfig& cfg) {
    return json{{"family", name_of(cfg.family)},
                {"prior_kind", name_of(cfg.prior_kind)},
                {"laplace_form", name_of(cfg.laplace_form)},
                {"samples_grad", cfg.samples_grad},
                {"samples_cdf", cfg.samples_cdf},
                {"coupling", name_of(cfg.coupling)},
                {"kl_nu", name_of(cfg.kl_nu)},
                {"include_normalizer", cfg.include_normalizer}};
}

json to_json(const TrainConfig& tc) {
    json j{{"max_iters", tc.max_iters},       {"learning_rate", tc.learning_rate}, {"beta1", tc.beta1},
           {"beta2", tc.beta2},               {"epsilon", tc.epsilon},             {"checkpoint_every", tc.checkpoint_every},
           {"seed", tc.seed},                 {"elbo_window", tc.elbo_window}};
    j["early_stop_rel_tol"] = tc.early_stop_rel_tol ? json(*tc.early_stop_rel_tol) : json(nullptr);
    return j;
}

json to_json(const PriorConfig& prior) {
    return json{{"kind", name_of(prior.kind)}, {"tau", prior.tau}, {"fixed_nu", prior.fixed_nu}};
}

FamilyConfig family_from_json(const json& j) {
    try {
        FamilyConfig cfg;
        cfg.family = parse_enum<Family>(j, "family");
        cfg.prior_kind = parse_enum<PriorKind>(j, "prior_kind");
        cfg.laplace_form = parse_enum<LaplaceForm>(j, "laplace_form");
        cfg.samples_grad = j.at("samples_grad").get<std::size_t>();
        cfg.samples_cdf = j.at("samples_cdf").get<std::size_t>();
        cfg.coupling = parse_enum<PenaltyCoupling>(j, "coupling");
        cfg.kl_nu = parse_enum<KlNuExpectation>(j, "kl_nu");
        cfg.include_normalizer = j.at("include_normalizer").get<bool>();
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad family config: ") + e.what());
    }
}

TrainConfig train_from_json(const json& j) {
    try {
        TrainConfig tc;
        tc.max_iters = j.at("max_iters").get<std::size_t>();
        tc.learning_rate = j.at("learning_rate").get<double>();
        tc.beta1 = j.at("beta1").get<double>();
        tc.beta2 = j.at("beta2").get<double>();
        tc.epsilon = j.at("epsilon").get<double>();
        tc.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
        tc.seed = j.at("seed").get<std::uint64_t>();
        tc.elbo_window = j.at("elbo_window").get<std::size_t>();
        if (!j.at("early_stop_rel_tol").is_null()) tc.early_stop_rel_tol = j.at("early_stop_rel_tol").get<double>();
        return tc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad train config: ") + e.what());
    }
}

PriorConfig prior_from_json(const json& j) {
    try {
        PriorConfig p;
        p.kind = parse_enum<PriorKind>(j, "kind");
        p.tau = j.at("tau").get<std::vector<double>>();
        p.fixed_nu = j.at("fixed_nu").get<std::vector<double>>();
        return p;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad prior config: ") + e.what());
    }
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace gfgl
