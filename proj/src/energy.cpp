#include "acpolicy/energy.hpp"

#include <algorithm>
#include <cmath>

#include "acpolicy/errors.hpp"
#include "csv_util.hpp"

namespace acpolicy {

void EnergyModelConfig::validate(int temp_lower, int temp_upper) const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw ConfigError(std::string("energy.") + field + " " + what, field);
  };
  require(std::isfinite(ua_w_per_k) && ua_w_per_k >= 0.0, "ua_w_per_k", "must be >= 0");
  require(std::isfinite(internal_gains_w) && internal_gains_w >= 0.0, "internal_gains_w",
          "must be >= 0");
  require(std::isfinite(cop) && cop > 0.0, "cop", "must be > 0");
  require(std::isfinite(price_per_kwh) && price_per_kwh >= 0.0, "price_per_kwh", "must be >= 0");
  require(std::isfinite(interval_h) && interval_h > 0.0, "interval_h", "must be > 0");
  require(base_setpoint >= temp_lower && base_setpoint <= temp_upper, "base_setpoint",
          "must lie within the session temperature bounds");
}

WeatherTrace WeatherTrace::constant(double outdoor_c) {
  return WeatherTrace({WeatherSample{"constant", outdoor_c}});
}

WeatherTrace::WeatherTrace(std::vector<WeatherSample> samples) : samples_(std::move(samples)) {
  if (samples_.empty()) throw ConfigError("weather trace is empty", "weather");
  for (const auto& s : samples_) {
    if (!std::isfinite(s.outdoor_c) || s.outdoor_c < -20.0 || s.outdoor_c > 60.0) {
      throw ConfigError("outdoor temperature outside [-20, 60] at " + s.timestamp, "weather");
    }
  }
}

WeatherTrace WeatherTrace::from_csv(const std::filesystem::path& path) {
  const auto rows = csv::read(path, "timestamp,outdoor_c");
  std::vector<WeatherSample> samples;
  samples.reserve(rows.size());
  for (const auto& row : rows) {
    csv::expect_columns(row, 2, path);
    samples.push_back({row.fields[0], csv::to_double(row.fields[1], path, row.line)});
  }
  return WeatherTrace(std::move(samples));
}

CostVector::CostVector(int current_temp, int base_setpoint, double base_cost,
                       CostProvenance provenance,
                       std::array<std::optional<OutcomeCost>, kOutcomeCount> entries)
    : current_temp_(current_temp),
      base_setpoint_(base_setpoint),
      base_cost_(base_cost),
      provenance_(provenance),
      entries_(entries) {
  bool any = false;
  for (const auto& e : entries_) any = any || e.has_value();
  if (!any) throw ConfigError("cost vector has no feasible outcome", "costs");
}

CostVector CostVector::from_increments(
    int current_temp, std::array<std::optional<double>, kOutcomeCount> increments) {
  std::array<std::optional<OutcomeCost>, kOutcomeCount> entries;
  for (auto kind : kAllOutcomes) {
    if (const auto& inc = increments[index_of(kind)]) {
      entries[index_of(kind)] = OutcomeCost{Outcome::at(kind, current_temp), *inc, *inc};
    }
  }
  return CostVector(current_temp, current_temp, 0.0, CostProvenance::Table, entries);
}

std::vector<OutcomeKind> CostVector::feasible_kinds() const {
  std::vector<OutcomeKind> out;
  for (auto kind : kAllOutcomes) {
    if (feasible(kind)) out.push_back(kind);
  }
  return out;
}

const OutcomeCost& CostVector::at(OutcomeKind kind) const {
  const auto& entry = entries_[index_of(kind)];
  if (!entry) {
    throw OutcomeNotFeasible("outcome " + std::string(to_string(kind)) + " at " +
                             std::to_string(current_temp_) +
                             " C is excluded by the temperature bounds");
  }
  return *entry;
}

CostVector CostVector::scaled(double factor) const {
  auto entries = entries_;
  for (auto& e : entries) {
    if (e) {
      e->absolute *= factor;
      e->incremental *= factor;
    }
  }
  return CostVector(current_temp_, base_setpoint_, base_cost_ * factor, provenance_, entries);
}

std::vector<OutcomeKind> feasible_outcomes(int current_temp, int temp_lower, int temp_upper) {
  std::vector<OutcomeKind> out;
  for (auto kind : kAllOutcomes) {
    const int sp = current_temp + setpoint_delta(kind);
    if (sp >= temp_lower && sp <= temp_upper) out.push_back(kind);
  }
  return out;
}

double cooling_load(double setpoint, const WeatherSample& weather,
                    const EnergyModelConfig& config) {
  const double watts =
      config.ua_w_per_k * (weather.outdoor_c - setpoint) + config.internal_gains_w;
  return std::max(0.0, watts) * config.interval_h / 1000.0;
}

CostVector outcome_costs(int current_temp, std::span<const OutcomeKind> feasible,
                         const WeatherSample& weather, const EnergyModelConfig& config) {
  if (feasible.empty()) throw ConfigError("no feasible outcome", "costs");
  auto cost_at = [&](int setpoint) {
    return cooling_load(setpoint, weather, config) / config.cop * config.price_per_kwh;
  };
  const double base = cost_at(config.base_setpoint);
  std::array<std::optional<OutcomeCost>, kOutcomeCount> entries;
  for (auto kind : feasible) {
    const auto outcome = Outcome::at(kind, current_temp);
    const double c = outcome.setpoint == config.base_setpoint ? base : cost_at(outcome.setpoint);
    entries[index_of(kind)] = OutcomeCost{outcome, c, c - base};
  }
  return CostVector(current_temp, config.base_setpoint, base, CostProvenance::Model, entries);
}

CostTable::CostTable(std::vector<RoundCosts> rounds) : rounds_(std::move(rounds)) {
  std::sort(rounds_.begin(), rounds_.end(),
            [](const RoundCosts& a, const RoundCosts& b) { return a.round < b.round; });
}

CostVector CostTable::costs_for(std::size_t round_index, int current_temp,
                                std::span<const OutcomeKind> feasible, int base_setpoint) const {
  if (round_index >= rounds_.size()) {
    throw ConfigError("cost table has " + std::to_string(rounds_.size()) +
                          " rounds; round index " + std::to_string(round_index) + " requested",
                      "cost_table");
  }
  const auto& row = rounds_[round_index];
  auto lookup = [&](int setpoint) {
    const auto it = row.by_setpoint.find(setpoint);
    if (it == row.by_setpoint.end()) {
      throw IncompleteTable("cost table round " + std::to_string(row.round) +
                            " has no cost for set-point " + std::to_string(setpoint));
    }
    return it->second;
  };
  const double base = lookup(base_setpoint);
  std::array<std::optional<OutcomeCost>, kOutcomeCount> entries;
  for (auto kind : feasible) {
    const auto outcome = Outcome::at(kind, current_temp);
    const double c = lookup(outcome.setpoint);
    entries[index_of(kind)] = OutcomeCost{outcome, c, c - base};
  }
  return CostVector(current_temp, base_setpoint, base, CostProvenance::Table, entries);
}

CostTable load_cost_table(const std::filesystem::path& path, int temp_lower, int temp_upper) {
  const auto rows = csv::read(path, "round,setpoint_c,cost_usd");
  std::map<long, std::map<int, double>> by_round;
  for (const auto& row : rows) {
    csv::expect_columns(row, 3, path);
    const long round = csv::to_integer(row.fields[0], path, row.line);
    const long setpoint = csv::to_integer(row.fields[1], path, row.line);
    const double cost = csv::to_double(row.fields[2], path, row.line);
    by_round[round][static_cast<int>(setpoint)] = cost;
  }
  std::vector<CostTable::RoundCosts> rounds;
  for (auto& [round, costs] : by_round) {
    for (int sp = temp_lower; sp <= temp_upper; ++sp) {
      if (!costs.count(sp)) {
        throw IncompleteTable("cost table round " + std::to_string(round) +
                              " is missing set-point " + std::to_string(sp));
      }
    }
    rounds.push_back({round, std::move(costs)});
  }
  if (rounds.empty()) throw IncompleteTable("cost table has no rounds");
  return CostTable(std::move(rounds));
}

}  // namespace acpolicy
