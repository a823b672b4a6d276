#include "acpolicy/mechanism.hpp"

#include <cmath>
#include <set>

#include "acpolicy/errors.hpp"
#include "acpolicy/random.hpp"
#include "enumerate.hpp"

namespace acpolicy {

namespace {

constexpr double kParamTolerance = 1e-9;

// Stay > Cooler > Warmer when welfare and cost are tied.
constexpr int tie_rank(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::Stay: return 0;
    case OutcomeKind::Cooler: return 1;
    case OutcomeKind::Warmer: return 2;
  }
  return 3;
}

std::vector<int> to_indices(std::span<const ComfortType> types) {
  std::vector<int> out(types.size());
  for (std::size_t i = 0; i < types.size(); ++i) out[i] = types[i].index();
  return out;
}

}  // namespace

void validate_distribution(const TypeDistribution& p, const std::string& who) {
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError("prior for " + who + " has a negative or non-finite entry", "priors");
    }
    total += v;
  }
  if (total == 0.0) {
    throw ConfigError("prior for " + who + " assigns zero probability to every type", "priors");
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError("prior for " + who + " sums to " + std::to_string(total) + ", not 1",
                      "priors");
  }
}

// ---------------------------------------------------------------------------
// TypeProfile

TypeProfile::TypeProfile(std::vector<TypeReport> reports) : reports_(std::move(reports)) {
  std::set<OccupantId> seen;
  types_.reserve(reports_.size());
  for (const auto& r : reports_) {
    if (!seen.insert(r.occupant).second) {
      throw ConfigError("duplicate report for occupant '" + r.occupant + "'", "reports");
    }
    types_.push_back(r.type);
  }
}

TypeProfile TypeProfile::anonymous(std::span<const ComfortType> types) {
  std::vector<TypeReport> reports;
  reports.reserve(types.size());
  for (std::size_t i = 0; i < types.size(); ++i) reports.push_back({std::to_string(i), types[i]});
  return TypeProfile(std::move(reports));
}

// ---------------------------------------------------------------------------
// MechanismParams

MechanismParams MechanismParams::standard(std::size_t n) {
  if (n == 0) throw ConstraintViolation("mechanism parameters need at least one occupant");
  const auto size = static_cast<Eigen::Index>(n);
  Eigen::VectorXd alpha = Eigen::VectorXd::Constant(size, 1.0 / static_cast<double>(n));
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(size, size);
  if (n > 1) {
    beta.setConstant(1.0 / static_cast<double>(n - 1));
    beta.diagonal().setZero();
  }
  return MechanismParams(std::move(alpha), std::move(beta));
}

MechanismParams::MechanismParams(Eigen::VectorXd alpha, Eigen::MatrixXd beta)
    : alpha_(std::move(alpha)), beta_(std::move(beta)) {
  if (auto why = violation(alpha_, beta_)) throw ConstraintViolation(*why);
}

MechanismParams::MechanismParams(Eigen::VectorXd alpha, Eigen::MatrixXd beta, Unchecked)
    : alpha_(std::move(alpha)), beta_(std::move(beta)) {}

MechanismParams MechanismParams::unvalidated(Eigen::VectorXd alpha, Eigen::MatrixXd beta) {
  return MechanismParams(std::move(alpha), std::move(beta), Unchecked{});
}

std::optional<std::string> MechanismParams::violation(const Eigen::VectorXd& alpha,
                                                      const Eigen::MatrixXd& beta) {
  const auto n = alpha.size();
  if (n == 0) return "alpha is empty";
  if (beta.rows() != n || beta.cols() != n) {
    return "beta must be " + std::to_string(n) + "x" + std::to_string(n);
  }
  if (!alpha.allFinite() || !beta.allFinite()) return "parameters must be finite";
  for (Eigen::Index i = 0; i < n; ++i) {
    if (alpha[i] < -kParamTolerance) {
      return "alpha_" + std::to_string(i) + " >= 0 violated (" + std::to_string(alpha[i]) + ")";
    }
  }
  if (std::abs(alpha.sum() - 1.0) > kParamTolerance) {
    return "sum of alpha = 1 violated (sum " + std::to_string(alpha.sum()) + ")";
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(beta(i, i)) > kParamTolerance) {
      return "beta_" + std::to_string(i) + std::to_string(i) + " = 0 violated";
    }
  }
  if (n > 1) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double column = beta.col(j).sum() - beta(j, j);
      if (std::abs(column - 1.0) > kParamTolerance) {
        return "column " + std::to_string(j) + " of beta sums to " + std::to_string(column) +
               ", violating sum_{i != j} beta_ij = 1";
      }
    }
  }
  return std::nullopt;
}

double PaymentVector::total() const noexcept {
  double sum = 0.0;
  for (double a : amounts) sum += a;
  return sum;
}

// ---------------------------------------------------------------------------
// Outcome selection

OutcomeSelector::OutcomeSelector(const CostVector& costs, const ValuationTable& table)
    : values_(table.values()), feasible_(costs.feasible_kinds()) {
  if (feasible_.empty()) throw ConfigError("no feasible outcome to select from", "costs");
  for (auto kind : feasible_) increments_[index_of(kind)] = costs.incremental(kind);
}

OutcomeKind OutcomeSelector::choose_indices(const int* type_indices, std::size_t n) const {
  std::array<double, kOutcomeCount> sums{};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = values_[type_indices[i]];
    sums[0] += row[0];
    sums[1] += row[1];
    sums[2] += row[2];
  }
  OutcomeKind best = feasible_.front();
  double best_welfare = sums[index_of(best)] - increments_[index_of(best)];
  for (std::size_t f = 1; f < feasible_.size(); ++f) {
    const OutcomeKind kind = feasible_[f];
    const double w = sums[index_of(kind)] - increments_[index_of(kind)];
    bool take = false;
    if (w > best_welfare + kTieTolerance) {
      take = true;
    } else if (w >= best_welfare - kTieTolerance) {
      const double dc = increments_[index_of(kind)];
      const double best_dc = increments_[index_of(best)];
      if (dc < best_dc - kTieTolerance) {
        take = true;
      } else if (dc <= best_dc + kTieTolerance && tie_rank(kind) < tie_rank(best)) {
        take = true;
      }
    }
    if (take) {
      best = kind;
      best_welfare = w;
    }
  }
  return best;
}

OutcomeKind OutcomeSelector::choose(std::span<const ComfortType> types) const {
  const auto idx = to_indices(types);
  return choose_indices(idx.data(), idx.size());
}

WelfareBreakdown welfare(const TypeProfile& profile, OutcomeKind outcome, const CostVector& costs,
                         const ValuationTable& table) {
  WelfareBreakdown out;
  out.incremental_cost = costs.incremental(outcome);  // throws OutcomeNotFeasible
  for (auto t : profile.types()) out.sum_valuations += table.value(t, outcome);
  out.welfare = out.sum_valuations - out.incremental_cost;
  return out;
}

WelfareBreakdown welfare(const TypeProfile& profile, const Outcome& outcome,
                         const CostVector& costs, const ValuationTable& table) {
  if (costs.feasible(outcome.kind) && costs.at(outcome.kind).outcome.setpoint != outcome.setpoint) {
    throw OutcomeNotFeasible("set-point " + std::to_string(outcome.setpoint) +
                             " does not match the cost vector's outcome");
  }
  return welfare(profile, outcome.kind, costs, table);
}

Outcome select_outcome(const TypeProfile& profile, const CostVector& costs,
                       const ValuationTable& table) {
  const OutcomeSelector selector(costs, table);
  return Outcome::at(selector.choose(profile.types()), costs.current_temp());
}

// ---------------------------------------------------------------------------
// Expected externalities

namespace {

void check_priors(const JointPrior& priors) {
  for (std::size_t i = 0; i < priors.size(); ++i) {
    validate_distribution(priors[i], "occupant #" + std::to_string(i));
  }
}

ExternalityTable exhaustive_table(const JointPrior& priors, const OutcomeSelector& selector) {
  const std::size_t n = priors.size();
  ExternalityTable ext;
  ext.value_part.assign(n, TypeDistribution{});
  ext.cost_part.assign(n, TypeDistribution{});
  ext.exhaustive = true;
  std::vector<double> prefix(n + 1), suffix(n + 1);
  std::vector<double> u(n);
  detail::for_each_profile(n, [&](const int* idx) {
    const OutcomeKind x = selector.choose_indices(idx, n);
    const double dc = selector.increment(x);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      u[j] = selector.value(idx[j], x);
      total += u[j];
    }
    prefix[0] = 1.0;
    for (std::size_t j = 0; j < n; ++j) prefix[j + 1] = prefix[j] * priors[j][idx[j]];
    suffix[n] = 1.0;
    for (std::size_t j = n; j-- > 0;) suffix[j] = suffix[j + 1] * priors[j][idx[j]];
    for (std::size_t k = 0; k < n; ++k) {
      const double w = prefix[k] * suffix[k + 1];
      if (w == 0.0) continue;
      ext.value_part[k][idx[k]] += w * (total - u[k]);
      ext.cost_part[k][idx[k]] += w * dc;
    }
  });
  return ext;
}

// Opponent profiles for occupant i are drawn once from stream i and reused
// for all nine own types.
void sampled_row(std::size_t i, const JointPrior& priors, const OutcomeSelector& selector,
                 const SamplingPlan& plan, TypeDistribution& value_row,
                 TypeDistribution& cost_row) {
  const std::size_t n = priors.size();
  Rng rng = make_rng(plan.seed, i);
  std::vector<int> idx(n, 0);
  value_row.fill(0.0);
  cost_row.fill(0.0);
  for (std::uint64_t s = 0; s < plan.samples; ++s) {
    double others_fixed = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) idx[j] = sample_index(priors[j], rng);
    }
    for (int t = 0; t < kTypeCount; ++t) {
      idx[i] = t;
      const OutcomeKind x = selector.choose_indices(idx.data(), n);
      others_fixed = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) others_fixed += selector.value(idx[j], x);
      }
      value_row[t] += others_fixed;
      cost_row[t] += selector.increment(x);
    }
  }
  const double inv = 1.0 / static_cast<double>(plan.samples);
  for (int t = 0; t < kTypeCount; ++t) {
    value_row[t] *= inv;
    cost_row[t] *= inv;
  }
}

ExternalityTable sampled_table(const JointPrior& priors, const OutcomeSelector& selector,
                               const SamplingPlan& plan) {
  if (plan.samples == 0) throw ConfigError("sample count must be positive", "samples");
  const std::size_t n = priors.size();
  ExternalityTable ext;
  ext.value_part.assign(n, TypeDistribution{});
  ext.cost_part.assign(n, TypeDistribution{});
  ext.exhaustive = false;
  for (std::size_t i = 0; i < n; ++i) {
    sampled_row(i, priors, selector, plan, ext.value_part[i], ext.cost_part[i]);
  }
  return ext;
}

}  // namespace

ExternalityTable externality_table(const JointPrior& priors, const CostVector& costs,
                                   const ValuationTable& table, const SamplingPlan& plan) {
  check_priors(priors);
  const OutcomeSelector selector(costs, table);
  if (priors.size() <= kMaxExhaustiveOccupants) return exhaustive_table(priors, selector);
  return sampled_table(priors, selector, plan);
}

double expected_externality(std::size_t i, ComfortType type_i, const JointPrior& priors,
                            const MechanismParams& params, const CostVector& costs,
                            const ValuationTable& table, const SamplingPlan& plan) {
  if (params.size() != priors.size() || i >= priors.size()) {
    throw PriorNotInitialized("priors cover " + std::to_string(priors.size()) +
                              " occupants, mechanism has " + std::to_string(params.size()));
  }
  check_priors(priors);
  const std::size_t n = priors.size();
  const OutcomeSelector selector(costs, table);
  double value = 0.0;
  double cost = 0.0;
  if (n <= kMaxExhaustiveOccupants) {
    std::vector<int> idx(n);
    detail::for_each_profile(n - 1, [&](const int* others) {
      double w = 1.0;
      for (std::size_t j = 0, o = 0; j < n; ++j) {
        if (j == i) {
          idx[j] = type_i.index();
        } else {
          idx[j] = others[o++];
          w *= priors[j][idx[j]];
        }
      }
      if (w == 0.0) return;
      const OutcomeKind x = selector.choose_indices(idx.data(), n);
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) value += w * selector.value(idx[j], x);
      }
      cost += w * selector.increment(x);
    });
  } else {
    TypeDistribution value_row{}, cost_row{};
    sampled_row(i, priors, selector, plan, value_row, cost_row);
    value = value_row[type_i.index()];
    cost = cost_row[type_i.index()];
  }
  const auto& alpha = params.alpha();
  const double others_alpha = alpha.sum() - alpha[static_cast<Eigen::Index>(i)];
  return value - others_alpha * cost;
}

// ---------------------------------------------------------------------------
// Payments

PaymentVector transfers(std::span<const ComfortType> types, OutcomeKind chosen,
                        const CostVector& costs, const MechanismParams& params,
                        const ExternalityTable& externalities) {
  const std::size_t n = types.size();
  if (params.size() != n || externalities.size() != n) {
    throw ConstraintViolation("profile, parameters and externalities disagree on group size");
  }
  const double dc = costs.incremental(chosen);
  const auto& alpha = params.alpha();
  const auto& beta = params.beta();
  std::vector<double> psi(n);
  for (std::size_t j = 0; j < n; ++j) psi[j] = externalities.psi(j, types[j].index(), alpha);
  PaymentVector out;
  out.amounts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    double redistributed = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) redistributed += beta(ii, static_cast<Eigen::Index>(j)) * psi[j];
    }
    out.amounts[i] = alpha[ii] * dc - psi[i] + redistributed;
  }
  return out;
}

PaymentVector agv_payment_generalized(const TypeProfile& profile, const JointPrior& priors,
                                      const CostVector& costs, const ValuationTable& table,
                                      const MechanismParams& params, const SamplingPlan& plan) {
  if (profile.empty()) throw DegenerateGroup("payments need at least one occupant");
  if (priors.size() != profile.size()) {
    throw PriorNotInitialized("priors cover " + std::to_string(priors.size()) + " of " +
                              std::to_string(profile.size()) + " occupants");
  }
  if (auto why = MechanismParams::violation(params.alpha(), params.beta())) {
    throw ConstraintViolation(*why);
  }
  const auto ext = externality_table(priors, costs, table, plan);
  const OutcomeSelector selector(costs, table);
  return transfers(profile.types(), selector.choose(profile.types()), costs, params, ext);
}

PaymentVector agv_payment_standard(const TypeProfile& profile, const JointPrior& priors,
                                   const CostVector& costs, const ValuationTable& table,
                                   const SamplingPlan& plan) {
  if (profile.size() < 2) {
    throw DegenerateGroup(
        "standard AGV needs at least two occupants; a lone occupant simply pays dC");
  }
  return agv_payment_generalized(profile, priors, costs, table,
                                 MechanismParams::standard(profile.size()), plan);
}

std::vector<double> net_benefit(const TypeProfile& profile, const Outcome& outcome,
                                const PaymentVector& payments, const ValuationTable& table) {
  if (payments.size() != profile.size()) {
    throw ConstraintViolation("payment vector length does not match the profile");
  }
  std::vector<double> out(profile.size());
  for (std::size_t i = 0; i < profile.size(); ++i) {
    out[i] = table.value(profile.types()[i], outcome.kind) - payments.amounts[i];
  }
  return out;
}

}  // namespace acpolicy
