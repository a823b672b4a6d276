#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acpolicy/comfort.hpp"
#include "acpolicy/energy.hpp"

namespace acpolicy {

using OccupantId = std::string;

// Probability of each of the nine comfort types.
using TypeDistribution = std::array<double, kTypeCount>;

// One distribution per occupant, in profile order, at the current
// temperature. Occupants are independent.
using JointPrior = std::vector<TypeDistribution>;

// Throws ConfigError unless every distribution is nonnegative and sums to
// one within 1e-12.
void validate_distribution(const TypeDistribution& p, const std::string& who);

struct TypeReport {
  OccupantId occupant;
  ComfortType type;
};

// Reported joint type, in a fixed occupant order.
class TypeProfile {
 public:
  TypeProfile() = default;
  // Throws ConfigError on duplicate occupant ids.
  explicit TypeProfile(std::vector<TypeReport> reports);
  // Occupants named "0", "1", ... in order.
  static TypeProfile anonymous(std::span<const ComfortType> types);

  std::size_t size() const noexcept { return reports_.size(); }
  bool empty() const noexcept { return reports_.empty(); }
  const std::vector<TypeReport>& reports() const noexcept { return reports_; }
  std::span<const ComfortType> types() const noexcept { return types_; }

 private:
  std::vector<TypeReport> reports_;
  std::vector<ComfortType> types_;
};

// Cost shares alpha (sum to one, nonnegative) and externality
// redistribution weights beta (zero diagonal, every column sums to one
// over the other occupants). For a single occupant the column condition is
// vacuous and only alpha = (1) is valid.
class MechanismParams {
 public:
  // alpha_i = 1/n, beta_ij = 1/(n-1).
  static MechanismParams standard(std::size_t n);

  // Throws ConstraintViolation naming the violated constraint.
  MechanismParams(Eigen::VectorXd alpha, Eigen::MatrixXd beta);

  // Skips validation. Only audits that deliberately corrupt a payment rule
  // should need this.
  static MechanismParams unvalidated(Eigen::VectorXd alpha, Eigen::MatrixXd beta);

  // Description of the first violated constraint, if any.
  static std::optional<std::string> violation(const Eigen::VectorXd& alpha,
                                              const Eigen::MatrixXd& beta);

  std::size_t size() const noexcept { return static_cast<std::size_t>(alpha_.size()); }
  const Eigen::VectorXd& alpha() const noexcept { return alpha_; }
  const Eigen::MatrixXd& beta() const noexcept { return beta_; }

 private:
  struct Unchecked {};
  MechanismParams(Eigen::VectorXd alpha, Eigen::MatrixXd beta, Unchecked);

  Eigen::VectorXd alpha_;
  Eigen::MatrixXd beta_;
};

struct WelfareBreakdown {
  double sum_valuations = 0.0;
  double incremental_cost = 0.0;
  double welfare = 0.0;
};

// Positive amounts are paid by the occupant, negative amounts received.
struct PaymentVector {
  std::vector<double> amounts;

  double total() const noexcept;
  std::size_t size() const noexcept { return amounts.size(); }
  double operator[](std::size_t i) const { return amounts[i]; }
};

// Welfare-maximizing outcome choice with deterministic tie-breaking: a
// lower incremental cost wins, then Stay, Cooler, Warmer in that order.
// Welfare values within kTieTolerance of each other count as tied.
class OutcomeSelector {
 public:
  static constexpr double kTieTolerance = 1e-12;

  OutcomeSelector(const CostVector& costs, const ValuationTable& table);

  OutcomeKind choose(std::span<const ComfortType> types) const;
  // Same, on raw type indices (0..8); used by the enumeration loops.
  OutcomeKind choose_indices(const int* type_indices, std::size_t n) const;

  double value(int type_index, OutcomeKind kind) const noexcept {
    return values_[type_index][index_of(kind)];
  }
  double increment(OutcomeKind kind) const noexcept { return increments_[index_of(kind)]; }
  const std::vector<OutcomeKind>& feasible() const noexcept { return feasible_; }

 private:
  ValuationTable::Matrix values_;
  std::array<double, kOutcomeCount> increments_{};
  std::vector<OutcomeKind> feasible_;
};

// Settings for expectations too large to enumerate (more than six
// occupants): the number of sampled opponent profiles and the seed.
struct SamplingPlan {
  std::uint64_t samples = 100000;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMaxExhaustiveOccupants = 6;

// Expected externalities split into the parts that do not depend on the
// cost shares: for occupant i reporting type t,
//   value_part[i][t] = E over the others of sum_{j != i} u_j(theta_j, x*)
//   cost_part[i][t]  = E over the others of dC(x*)
// so that psi_i(t) = value_part - (sum_{j != i} alpha_j) * cost_part.
struct ExternalityTable {
  std::vector<TypeDistribution> value_part;
  std::vector<TypeDistribution> cost_part;
  bool exhaustive = true;

  std::size_t size() const noexcept { return value_part.size(); }
  double psi(std::size_t i, int type_index, const Eigen::VectorXd& alpha) const {
    const double others_alpha = alpha.sum() - alpha[static_cast<Eigen::Index>(i)];
    return value_part[i][type_index] - others_alpha * cost_part[i][type_index];
  }
};

ExternalityTable externality_table(const JointPrior& priors, const CostVector& costs,
                                   const ValuationTable& table, const SamplingPlan& plan = {});

WelfareBreakdown welfare(const TypeProfile& profile, OutcomeKind outcome, const CostVector& costs,
                         const ValuationTable& table);
WelfareBreakdown welfare(const TypeProfile& profile, const Outcome& outcome,
                         const CostVector& costs, const ValuationTable& table);

// Throws ConfigError if the cost vector has no feasible outcome.
Outcome select_outcome(const TypeProfile& profile, const CostVector& costs,
                       const ValuationTable& table);

// psi_i(type_i): expectation over the other occupants' priors of their
// cost-adjusted value sum_{j != i} [u_j - alpha_j dC] at the efficient
// outcome. Exact for up to six occupants, sampled beyond.
double expected_externality(std::size_t i, ComfortType type_i, const JointPrior& priors,
                            const MechanismParams& params, const CostVector& costs,
                            const ValuationTable& table, const SamplingPlan& plan = {});

// t_i = alpha_i dC(x*) - psi_i(theta_i) + sum_{j != i} beta_ij psi_j(theta_j).
PaymentVector transfers(std::span<const ComfortType> types, OutcomeKind chosen,
                        const CostVector& costs, const MechanismParams& params,
                        const ExternalityTable& externalities);

PaymentVector agv_payment_generalized(const TypeProfile& profile, const JointPrior& priors,
                                      const CostVector& costs, const ValuationTable& table,
                                      const MechanismParams& params,
                                      const SamplingPlan& plan = {});

// Throws DegenerateGroup for a single occupant.
PaymentVector agv_payment_standard(const TypeProfile& profile, const JointPrior& priors,
                                   const CostVector& costs, const ValuationTable& table,
                                   const SamplingPlan& plan = {});

std::vector<double> net_benefit(const TypeProfile& profile, const Outcome& outcome,
                                const PaymentVector& payments, const ValuationTable& table);

}  // namespace acpolicy
