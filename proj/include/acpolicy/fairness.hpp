#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "acpolicy/mechanism.hpp"
#include "acpolicy/priors.hpp"

namespace acpolicy {

struct MomentMode {
  enum class Kind { Exhaustive, MonteCarlo };
  Kind kind = Kind::Exhaustive;
  std::uint64_t samples = 0;
  std::uint64_t seed = 0;

  static MomentMode exhaustive() { return {}; }
  static MomentMode monte_carlo(std::uint64_t samples, std::uint64_t seed) {
    return {Kind::MonteCarlo, samples, seed};
  }
  nlohmann::json to_json() const;
};

inline constexpr std::uint64_t kDefaultMonteCarloSamples = 100000;
inline constexpr std::size_t kMaxExhaustiveProfiles = 1000000;

// First and second moments of the random vector
//   Z = (u_1..u_n, dC, a_1..a_n, b_1..b_n)
// where u_i = u_i(theta_i, x*), dC = dC(x*), and a_i, b_i are the value and
// cost parts of occupant i's expected externality at its own type, so that
// psi_i = a_i - (sum_{j != i} alpha_j) b_i. Every net benefit is linear in
// Z with coefficients depending on (alpha, beta), which makes means and
// variances cheap to evaluate for any parameters.
class MomentCache {
 public:
  MomentCache(std::size_t n, Eigen::VectorXd mean, Eigen::MatrixXd covariance, MomentMode mode,
              Eigen::VectorXd mean_se = {}, Eigen::MatrixXd covariance_se = {});

  std::size_t size() const noexcept { return n_; }
  Eigen::Index dim() const noexcept { return mean_.size(); }
  Eigen::Index u(std::size_t i) const noexcept { return static_cast<Eigen::Index>(i); }
  Eigen::Index cost() const noexcept { return static_cast<Eigen::Index>(n_); }
  Eigen::Index a(std::size_t i) const noexcept { return static_cast<Eigen::Index>(n_ + 1 + i); }
  Eigen::Index b(std::size_t i) const noexcept {
    return static_cast<Eigen::Index>(2 * n_ + 1 + i);
  }

  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::MatrixXd& covariance() const noexcept { return covariance_; }
  // Standard errors of the Monte Carlo estimates; empty when exhaustive.
  const Eigen::VectorXd& mean_se() const noexcept { return mean_se_; }
  const Eigen::MatrixXd& covariance_se() const noexcept { return covariance_se_; }
  const MomentMode& mode() const noexcept { return mode_; }

  // E[psi_i] at the given cost shares.
  double expected_psi(std::size_t i, const Eigen::VectorXd& alpha) const;

 private:
  std::size_t n_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  MomentMode mode_;
  Eigen::VectorXd mean_se_;
  Eigen::MatrixXd covariance_se_;
};

// Throws DegenerateGroup for fewer than two occupants, StateSpaceOverflow
// when exhaustive mode would exceed 10^6 joint profiles, ConfigError for an
// invalid prior. `psi_plan` is used only when the externality tables
// themselves must be sampled (more than six occupants).
MomentCache build_moment_cache(const JointPrior& priors, const CostVector& costs,
                               const ValuationTable& table,
                               MomentMode mode = MomentMode::exhaustive(),
                               const SamplingPlan& psi_plan = {});
MomentCache build_moment_cache(const PriorSet& priors, const std::vector<OccupantId>& occupants,
                               int temperature, const CostVector& costs,
                               const ValuationTable& table,
                               MomentMode mode = MomentMode::exhaustive(),
                               const SamplingPlan& psi_plan = {});

// Coefficients of pi_i as a linear function of Z.
Eigen::VectorXd net_benefit_coefficients(const MomentCache& cache, const MechanismParams& params,
                                         std::size_t i);

// Both throw ConstraintViolation on a dimension mismatch.
std::vector<double> exante_net_benefits(const MomentCache& cache, const MechanismParams& params);
double expost_variance_sum(const MomentCache& cache, const MechanismParams& params);

enum class SolverStatus { Exact, ProjectedGradient, Infeasible };
std::string to_string(SolverStatus s);

struct FairnessOptions {
  double gradient_tolerance = 1e-10;
  std::size_t max_iterations = 100000;
  double equality_tolerance = 1e-6;
};

struct FairnessSolution {
  MechanismParams params;
  std::vector<double> exante_benefits{};
  double equality_residual = 0.0;
  double sum_variance = 0.0;
  double baseline_sum_variance = 0.0;
  double baseline_equality_residual = 0.0;
  SolverStatus status = SolverStatus::Exact;
  std::size_t iterations = 0;
  MomentMode provenance{};

  bool baseline_feasible(double tolerance = 1e-6) const {
    return baseline_equality_residual <= tolerance;
  }
  nlohmann::json to_json() const;
  static FairnessSolution from_json(const nlohmann::json& doc);
};

// Two-stage program: equal expected net benefits as hard constraints, then
// the smallest sum of ex-post net-benefit variances. For fixed alpha the
// problem in beta is an equality-constrained convex QP solved exactly; the
// reduced objective is then minimized over the alpha simplex by projected
// gradient, starting from the standard shares.
FairnessSolution optimize_fairness(const MomentCache& cache, const FairnessOptions& options = {});

// Reduced objective min_beta V(alpha, beta) under the constraints and its
// gradient with respect to alpha; exposed for tests. Returns false when the
// constraints cannot be met at this alpha.
struct ReducedObjective {
  bool feasible = false;
  bool singular = false;
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd beta;
};
ReducedObjective reduced_objective(const MomentCache& cache, const Eigen::VectorXd& alpha);

}  // namespace acpolicy
