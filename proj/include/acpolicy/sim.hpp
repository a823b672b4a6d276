#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "acpolicy/fairness.hpp"
#include "acpolicy/mechanism.hpp"
#include "acpolicy/priors.hpp"
#include "acpolicy/random.hpp"
#include "acpolicy/session.hpp"

namespace acpolicy::sim {

// Synthetic occupants. Each has a preferred temperature; at room
// temperature T the deviation d = T - preferred sets the group weights
//   P(group s) ~ exp(-kappa (s + d)^2),  s = -1 cooler, 0 current, +1 warmer
// and the three types inside a group share their group's mass equally.
struct PriorGenerator {
  enum class Kind { Symmetric, SkewedWarm, SkewedCool, Custom };
  Kind kind = Kind::Symmetric;
  double center = 24.0;
  double spread = 1.0;   // preferred temperatures span center +- spread/2
  double kappa = 1.5;
  std::vector<double> preferred;  // Custom only, one per occupant

  std::vector<double> preferences(std::size_t n) const;
  PriorSet generate(const std::vector<OccupantId>& occupants, int temp_lower,
                    int temp_upper) const;
  nlohmann::json to_json() const;
  static PriorGenerator from_json(const nlohmann::json& doc);
};

TypeDistribution preference_distribution(double deviation, double kappa);

enum class PolicyKind { Generalized, StandardAGV, FixedSetpoint };
std::string_view to_string(PolicyKind kind) noexcept;

struct Policy {
  PolicyKind kind = PolicyKind::Generalized;
  int fixed_setpoint = 22;
  nlohmann::json to_json() const;
};

// Single-round view of a scenario used by the fairness, audit and sweep
// commands: one temperature, and optionally hand-set cost increments in
// place of the energy model (null entries are infeasible outcomes).
struct Probe {
  int temperature = 0;
  std::optional<std::array<std::optional<double>, kOutcomeCount>> increments;
};

struct ScenarioSpec {
  std::string name = "scenario";
  SessionConfig session;
  std::optional<PriorGenerator> generator;
  PriorSet priors;  // true type distributions (explicit or generated)
  // Hand the true priors to the session as pseudo-observations.
  bool seed_session_priors = true;
  Policy policy;
  std::size_t rounds = 10;
  std::uint64_t seed = 0;
  Probe probe;                       // temperature defaults to initial_temp
  std::vector<double> prices;        // price-sweep grid, $/kWh
  std::optional<MechanismParams> audit_params;  // loaded unvalidated
  nlohmann::json expect = nlohmann::json::object();  // fixture annotations

  // Generates `priors` from the generator when one is set.
  static ScenarioSpec from_json(const nlohmann::json& doc,
                                const std::filesystem::path& base_dir = {});
  static ScenarioSpec load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  ScenarioSpec with_policy(Policy p) const;
  ScenarioSpec with_seed(std::uint64_t s) const;
};

CostVector probe_costs(const ScenarioSpec& spec);
JointPrior probe_priors(const ScenarioSpec& spec);

// Independent draw per occupant, in the given order.
TypeProfile sample_profile(const PriorSet& priors, const std::vector<OccupantId>& occupants,
                           int temperature, Rng& rng);

struct RoundRecord {
  std::size_t round = 0;
  int T0 = 0;
  Phase phase = Phase::FairAllocation;
  Outcome outcome{OutcomeKind::Stay, 0};
  std::vector<int> types;  // reported ids, occupancy order
  WelfareBreakdown welfare;
  double best_alternative_welfare = 0.0;  // max over the other feasible outcomes
  double cost = 0.0;                      // absolute C(x*)
  double incremental_cost = 0.0;          // dC(x*)
  std::vector<double> valuations;         // u_i
  std::optional<std::vector<double>> payments;
  std::vector<double> net_benefits;       // u_i - t_i
  std::string solver_status;              // fairness status in force, if any

  bool mechanism_decided() const noexcept { return phase == Phase::FairAllocation; }
  double budget_residual() const;  // sum t - dC, 0 without payments
};

struct SessionResult {
  std::string name;
  Policy policy;
  std::vector<OccupantId> occupants;
  std::vector<RoundRecord> rounds;
  double mean_comfort = 0.0;   // mean over rounds of sum_i u_i
  double total_cost = 0.0;     // sum over rounds of C(x*)
  std::vector<double> mean_pi;
  std::vector<double> var_pi;  // sample variance (n - 1)
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json generator;

  nlohmann::json to_json() const;
  static SessionResult from_json(const nlohmann::json& doc);
  // round,T0,outcome,setpoint,welfare,sum_valuations,incremental_cost,cost,budget_residual
  std::string rounds_csv() const;
  // occupant,mean_pi,var_pi
  std::string occupants_csv() const;
};

// Fills the aggregates from the per-round records.
void aggregate(SessionResult& result);

SessionResult run_scenario(const ScenarioSpec& spec);

// Audits ---------------------------------------------------------------

struct IcDeviation {
  std::size_t occupant = 0;
  int true_type = 1;
  int reported_type = 1;
  double truthful = 0.0;   // interim E[pi_i | theta_i, truthful report]
  double deviating = 0.0;  // interim E[pi_i | theta_i, misreport]
  double std_error = 0.0;  // of (deviating - truthful); 0 when exhaustive
  double gain() const noexcept { return deviating - truthful; }
};

struct IcAudit {
  bool exhaustive = true;
  std::uint64_t samples = 0;
  std::vector<IcDeviation> deviations;  // every (i, theta, misreport)
  double max_violation = 0.0;           // max(0, max gain)
  double max_z = 0.0;                   // sampled only: max gain / SE
  // interim[i][theta][report]
  std::vector<std::array<std::array<double, kTypeCount>, kTypeCount>> interim;

  // Exhaustive: max_violation <= tol. Sampled: every gain <= z * SE + tol.
  bool passed(double tol = 1e-9, double z = 3.0) const;
  nlohmann::json to_json() const;
};

struct AuditDepth {
  bool exhaustive = true;
  std::uint64_t samples = 0;
  std::uint64_t seed = 0;
  static AuditDepth full() { return {}; }
  static AuditDepth sampled(std::uint64_t samples, std::uint64_t seed) {
    return {false, samples, seed};
  }
};

// Exhaustive depth enumerates opponents and uses the payment rule's psi
// values. Sampled depth estimates each interim value on common opponent
// draws, psi included, so every gain carries a consistent standard error.
// Throws StateSpaceOverflow for an exhaustive audit beyond six occupants.
IcAudit ic_audit(const JointPrior& priors, const MechanismParams& params, const CostVector& costs,
                 const ValuationTable& table, AuditDepth depth = AuditDepth::full());

struct BudgetAudit {
  std::size_t profiles = 0;
  double max_imbalance = 0.0;  // max |sum t - dC|
  bool passed(double tol = 1e-9) const { return max_imbalance <= tol; }
  nlohmann::json to_json() const;
};

// Every profile when exhaustive, otherwise `depth.samples` draws.
BudgetAudit budget_audit(const JointPrior& priors, const MechanismParams& params,
                         const CostVector& costs, const ValuationTable& table,
                         AuditDepth depth = AuditDepth::full());

// Baselines and sweeps -------------------------------------------------

struct SavingsReport {
  double policy_cost = 0.0;
  double baseline_cost = 0.0;
  double saving = 0.0;  // 1 - policy / baseline
  double policy_comfort = 0.0;
  double baseline_comfort = 0.0;
  nlohmann::json to_json() const;
};

// Throws ConfigError on mismatched round counts.
SavingsReport baseline_compare(const SessionResult& policy, const SessionResult& baseline);

struct PricePoint {
  double price = 0.0;
  SolverStatus status = SolverStatus::Exact;
  double common_benefit = 0.0;  // mean optimized E[pi_i]
  double spread = 0.0;          // max - min optimized E[pi_i]
  std::vector<double> benefits;
  std::vector<double> standard_benefits;
  double standard_spread = 0.0;
};

struct PriceSweep {
  std::vector<PricePoint> points;
  bool non_increasing(double tol = 1e-12) const;
  nlohmann::json to_json() const;
  static PriceSweep from_json(const nlohmann::json& doc);
  std::string csv() const;  // price,common_benefit
};

// Rebuilds the probe costs for each price, re-optimizes fairness and
// records the common benefit. Hand-set increments and cost tables are
// scaled by price / price_per_kwh. Throws ConfigError unless the grid is
// ascending.
PriceSweep price_sweep(const ScenarioSpec& spec, const std::vector<double>& prices);

std::string sha256_hex(const std::string& data);

}  // namespace acpolicy::sim
