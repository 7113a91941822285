#pragma once

#include "egoface/model/face_model.hpp"

#include "json.hpp"

namespace egoface::model {

/// {"R": [...], "T": [...], "alpha": [...], "beta": [...], "delta": [...], "gamma": [...]}
nlohmann::json param_to_json(const ParamVector& p);

/// Throws std::invalid_argument on missing fields.
ParamVector param_from_json(const nlohmann::json& j);

} // namespace egoface::model
