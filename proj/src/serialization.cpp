#include "acpolicy/serialization.hpp"

#include <string>

#include "acpolicy/errors.hpp"
#include "acpolicy/money.hpp"

namespace acpolicy::serial {

using nlohmann::json;

json costs_to_json(const CostVector& costs) {
  json outcomes = json::object();
  for (const auto& entry : costs.entries()) {
    if (!entry) continue;
    outcomes[std::string(to_string(entry->outcome.kind))] = {
        {"setpoint", entry->outcome.setpoint},
        {"absolute", money::exact(entry->absolute)},
        {"incremental", money::exact(entry->incremental)}};
  }
  return {{"current_temp", costs.current_temp()},
          {"base_setpoint", costs.base_setpoint()},
          {"base_cost", money::exact(costs.base_cost())},
          {"provenance", costs.provenance() == CostProvenance::Model ? "model" : "table"},
          {"outcomes", std::move(outcomes)}};
}

CostVector costs_from_json(const json& doc) {
  try {
    const int current = doc.at("current_temp").get<int>();
    std::array<std::optional<OutcomeCost>, kOutcomeCount> entries;
    for (const auto& [name, item] : doc.at("outcomes").items()) {
      const OutcomeKind kind = outcome_kind_from_string(name);
      entries[index_of(kind)] =
          OutcomeCost{Outcome{kind, item.at("setpoint").get<int>()},
                      money::parse(item.at("absolute").get<std::string>()),
                      money::parse(item.at("incremental").get<std::string>())};
    }
    const auto prov = doc.at("provenance").get<std::string>();
    return CostVector(current, doc.at("base_setpoint").get<int>(),
                      money::parse(doc.at("base_cost").get<std::string>()),
                      prov == "table" ? CostProvenance::Table : CostProvenance::Model, entries);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed cost vector: ") + e.what(), "costs");
  }
}

json welfare_to_json(const WelfareBreakdown& w) {
  return {{"sum_valuations", money::exact(w.sum_valuations)},
          {"incremental_cost", money::exact(w.incremental_cost)},
          {"welfare", money::exact(w.welfare)}};
}

WelfareBreakdown welfare_from_json(const json& doc) {
  return {money::parse(doc.at("sum_valuations").get<std::string>()),
          money::parse(doc.at("incremental_cost").get<std::string>()),
          money::parse(doc.at("welfare").get<std::string>())};
}

json params_to_json(const MechanismParams& params) {
  const auto& a = params.alpha();
  const auto& b = params.beta();
  json beta = json::array();
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < b.cols(); ++j) row.push_back(b(i, j));
    beta.push_back(std::move(row));
  }
  return {{"alpha", std::vector<double>(a.data(), a.data() + a.size())}, {"beta", std::move(beta)}};
}

MechanismParams params_from_json(const json& doc) {
  try {
    const auto alpha_v = doc.at("alpha").get<std::vector<double>>();
    const auto beta_v = doc.at("beta").get<std::vector<std::vector<double>>>();
    const auto n = static_cast<Eigen::Index>(alpha_v.size());
    if (beta_v.size() != alpha_v.size()) throw ConfigError("beta must match alpha", "beta");
    Eigen::VectorXd alpha(n);
    Eigen::MatrixXd beta(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& row = beta_v[static_cast<std::size_t>(i)];
      if (row.size() != alpha_v.size()) throw ConfigError("beta must be square", "beta");
      alpha[i] = alpha_v[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < n; ++j) beta(i, j) = row[static_cast<std::size_t>(j)];
    }
    return MechanismParams(std::move(alpha), std::move(beta));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed mechanism parameters: ") + e.what(), "params");
  }
}

json amounts_to_json(const std::vector<double>& amounts) {
  json out = json::array();
  for (double a : amounts) out.push_back(money::exact(a));
  return out;
}

std::vector<double> amounts_from_json(const json& doc) {
  std::vector<double> out;
  for (const auto& item : doc) out.push_back(money::parse(item.get<std::string>()));
  return out;
}

}  // namespace acpolicy::serial
