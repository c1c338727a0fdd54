#pragma once

#include <string>

#include <json.hpp>

#include "rareis/density.hpp"

namespace rareis {

/// JSON document layout:
///   {"type":"mppca","d":..,"l":..,"weights":[..],
///    "components":[{"mu":[..],"W":[[row 0], [row 1], ..],"sigma2":..}, ..]}
///   {"type":"gmm","d":..,"weights":[..],"components":[{"mu":[..],"cov":[[..], ..]}, ..]}
/// Doubles are written in shortest round-trip form, so a save/load cycle is
/// bit-exact for finite values.
nlohmann::json model_to_json(const MppcaModel& model);
nlohmann::json model_to_json(const GmmModel& model);
nlohmann::json model_to_json(const Proposal& model);

/// Accepts "mppca", "gmm" and "prior" ({"type":"prior","d":..}) documents.
Proposal model_from_json(const nlohmann::json& doc);

std::string dump_model(const Proposal& model);
Proposal parse_model(const std::string& text);

}  // namespace rareis
