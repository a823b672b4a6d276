#pragma once

#include <json.hpp>

#include "acpolicy/energy.hpp"
#include "acpolicy/mechanism.hpp"

// JSON forms shared by the event log, result files and the HTTP API.
// Currency fields are decimal strings (money::exact) and parse back to the
// identical double.
namespace acpolicy::serial {

nlohmann::json costs_to_json(const CostVector& costs);
CostVector costs_from_json(const nlohmann::json& doc);

nlohmann::json welfare_to_json(const WelfareBreakdown& w);
WelfareBreakdown welfare_from_json(const nlohmann::json& doc);

// {"alpha": [...], "beta": [[...], ...]}
nlohmann::json params_to_json(const MechanismParams& params);
MechanismParams params_from_json(const nlohmann::json& doc);

nlohmann::json amounts_to_json(const std::vector<double>& amounts);
std::vector<double> amounts_from_json(const nlohmann::json& doc);

}  // namespace acpolicy::serial
