#pragma once

#include "nlgrowth/estimator.hpp"
#include "nlgrowth/postfit.hpp"

#include <json.hpp>

#include <string>

namespace nlgrowth {

// Self-describing fit file (schema "nlgrowth-fit/1"): model spec, column
// roles, estimates with covariance, attempt history and derived parameters.
// Written deterministically so identical fits produce identical bytes.
void save_fit(const FitResult& fit, const DerivedParamTable& derived, const std::string& path);

struct LoadedFit {
    FitResult fit;
    DerivedParamTable derived;
};

LoadedFit load_fit(const std::string& path);

// JSON forms shared by fit files and simulation configs.
nlohmann::ordered_json spec_to_json(const ModelSpec& s);
ModelSpec spec_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json roles_to_json(const ColumnRoles& r);
ColumnRoles roles_from_json(const nlohmann::ordered_json& j);

} // namespace nlgrowth
