#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acpolicy/comfort.hpp"

namespace acpolicy {

// Single-zone steady-state cooling model with a constant COP.
struct EnergyModelConfig {
  double ua_w_per_k = 50.0;        // envelope thermal conductance
  double internal_gains_w = 400.0; // lighting + equipment (+ people)
  double cop = 3.0;
  double price_per_kwh = 0.25;     // rho
  double interval_h = 0.5;
  int base_setpoint = 22;          // set-point whose cost the building covers

  // Throws ConfigError naming the offending field.
  void validate(int temp_lower, int temp_upper) const;
};

struct WeatherSample {
  std::string timestamp;
  double outdoor_c = 30.0;
};

// Per-round outdoor conditions. Round r reads sample r modulo the trace
// length, so a constant is a trace of length one.
class WeatherTrace {
 public:
  static WeatherTrace constant(double outdoor_c);
  // CSV with header `timestamp,outdoor_c`.
  static WeatherTrace from_csv(const std::filesystem::path& path);
  explicit WeatherTrace(std::vector<WeatherSample> samples);

  const WeatherSample& for_round(std::size_t round) const {
    return samples_[round % samples_.size()];
  }
  const std::vector<WeatherSample>& samples() const noexcept { return samples_; }

 private:
  std::vector<WeatherSample> samples_;
};

enum class CostProvenance { Model, Table };

struct OutcomeCost {
  Outcome outcome;
  double absolute;     // C(x), dollars for the interval
  double incremental;  // C(x) - C(base)

  friend bool operator==(const OutcomeCost&, const OutcomeCost&) = default;
};

// Energy cost of every feasible outcome of one round.
class CostVector {
 public:
  CostVector(int current_temp, int base_setpoint, double base_cost, CostProvenance provenance,
             std::array<std::optional<OutcomeCost>, kOutcomeCount> entries);

  // Convenience for tests and audits: incremental costs given directly,
  // absolute costs equal to them (base cost 0). nullopt marks an
  // infeasible outcome.
  static CostVector from_increments(int current_temp,
                                    std::array<std::optional<double>, kOutcomeCount> increments);

  int current_temp() const noexcept { return current_temp_; }
  int base_setpoint() const noexcept { return base_setpoint_; }
  double base_cost() const noexcept { return base_cost_; }
  CostProvenance provenance() const noexcept { return provenance_; }

  bool feasible(OutcomeKind kind) const noexcept { return entries_[index_of(kind)].has_value(); }
  std::vector<OutcomeKind> feasible_kinds() const;
  // Both throw OutcomeNotFeasible for an excluded outcome.
  const OutcomeCost& at(OutcomeKind kind) const;
  double incremental(OutcomeKind kind) const { return at(kind).incremental; }
  double absolute(OutcomeKind kind) const { return at(kind).absolute; }

  const std::array<std::optional<OutcomeCost>, kOutcomeCount>& entries() const noexcept {
    return entries_;
  }

  // Returns a copy with every cost multiplied by `factor` (price sweeps).
  CostVector scaled(double factor) const;

  friend bool operator==(const CostVector&, const CostVector&) = default;

 private:
  int current_temp_;
  int base_setpoint_;
  double base_cost_;
  CostProvenance provenance_;
  std::array<std::optional<OutcomeCost>, kOutcomeCount> entries_;
};

// Outcomes whose set-point stays inside [temp_lower, temp_upper].
std::vector<OutcomeKind> feasible_outcomes(int current_temp, int temp_lower, int temp_upper);

// Thermal energy (kWh) removed over one interval to hold `setpoint`.
double cooling_load(double setpoint, const WeatherSample& weather, const EnergyModelConfig& config);

CostVector outcome_costs(int current_temp, std::span<const OutcomeKind> feasible,
                         const WeatherSample& weather, const EnergyModelConfig& config);

// Absolute costs per round and set-point, ingested from an external
// building simulation. Rounds are stored in ascending order; session round
// r reads the r-th stored round.
class CostTable {
 public:
  struct RoundCosts {
    long round;
    std::map<int, double> by_setpoint;
  };

  explicit CostTable(std::vector<RoundCosts> rounds);

  std::size_t size() const noexcept { return rounds_.size(); }
  const std::vector<RoundCosts>& rounds() const noexcept { return rounds_; }

  // Throws ConfigError when the table has fewer rounds than requested.
  CostVector costs_for(std::size_t round_index, int current_temp,
                       std::span<const OutcomeKind> feasible, int base_setpoint) const;

 private:
  std::vector<RoundCosts> rounds_;
};

// CSV with header `round,setpoint_c,cost_usd`. Every round must list every
// set-point in [temp_lower, temp_upper]; missing rows raise IncompleteTable
// naming the round and set-point, malformed numbers raise ParseError with
// the line number.
CostTable load_cost_table(const std::filesystem::path& path, int temp_lower, int temp_upper);

}  // namespace acpolicy
