#pragma once

#include <json.hpp>

#include "gfgl/priors.hpp"
#include "gfgl/trainer.hpp"
#include "gfgl/variational.hpp"

namespace gfgl {

nlohmann::json to_json(const FamilyConfig& cfg);
nlohmann::json to_json(const TrainConfig& tc);
nlohmann::json to_json(const PriorConfig& prior);

FamilyConfig family_from_json(const nlohmann::json& j);
TrainConfig train_from_json(const nlohmann::json& j);
PriorConfig prior_from_json(const nlohmann::json& j);

/// FNV-1a over the bytes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t v);

}  // namespace gfgl
