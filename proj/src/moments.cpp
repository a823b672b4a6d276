#include <cmath>

#include "acpolicy/errors.hpp"
#include "acpolicy/fairness.hpp"
#include "acpolicy/random.hpp"
#include "enumerate.hpp"

namespace acpolicy {

nlohmann::json MomentMode::to_json() const {
  if (kind == Kind::Exhaustive) return {{"mode", "exhaustive"}};
  return {{"mode", "monte-carlo"}, {"samples", samples}, {"seed", seed}};
}

MomentCache::MomentCache(std::size_t n, Eigen::VectorXd mean, Eigen::MatrixXd covariance,
                         MomentMode mode, Eigen::VectorXd mean_se, Eigen::MatrixXd covariance_se)
    : n_(n),
      mean_(std::move(mean)),
      covariance_(std::move(covariance)),
      mode_(mode),
      mean_se_(std::move(mean_se)),
      covariance_se_(std::move(covariance_se)) {
  const auto dim = static_cast<Eigen::Index>(3 * n + 1);
  if (mean_.size() != dim || covariance_.rows() != dim || covariance_.cols() != dim) {
    throw ConstraintViolation("moment cache dimensions do not match " + std::to_string(n) +
                              " occupants");
  }
}

double MomentCache::expected_psi(std::size_t i, const Eigen::VectorXd& alpha) const {
  const double others = alpha.sum() - alpha[static_cast<Eigen::Index>(i)];
  return mean_[a(i)] - others * mean_[b(i)];
}

namespace {

// Separate from the externality sampling streams (0..n-1).
constexpr std::uint64_t kMomentStream = std::uint64_t{1} << 32;

struct Sampler {
  const JointPrior& priors;
  const OutcomeSelector& selector;
  const ExternalityTable& ext;

  void fill(const int* idx, Eigen::VectorXd& z) const {
    const std::size_t n = priors.size();
    const OutcomeKind x = selector.choose_indices(idx, n);
    for (std::size_t i = 0; i < n; ++i) {
      z[static_cast<Eigen::Index>(i)] = selector.value(idx[i], x);
      z[static_cast<Eigen::Index>(n + 1 + i)] = ext.value_part[i][idx[i]];
      z[static_cast<Eigen::Index>(2 * n + 1 + i)] = ext.cost_part[i][idx[i]];
    }
    z[static_cast<Eigen::Index>(n)] = selector.increment(x);
  }
};

MomentCache exhaustive_cache(const JointPrior& priors, const Sampler& sampler) {
  const std::size_t n = priors.size();
  const auto dim = static_cast<Eigen::Index>(3 * n + 1);
  Eigen::VectorXd z(dim), mean = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  auto weight = [&](const int* idx) {
    double w = 1.0;
    for (std::size_t i = 0; i < n; ++i) w *= priors[i][idx[i]];
    return w;
  };
  detail::for_each_profile(n, [&](const int* idx) {
    const double w = weight(idx);
    if (w == 0.0) return;
    sampler.fill(idx, z);
    mean.noalias() += w * z;
  });
  detail::for_each_profile(n, [&](const int* idx) {
    const double w = weight(idx);
    if (w == 0.0) return;
    sampler.fill(idx, z);
    z -= mean;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(z, w);
  });
  cov = cov.selfadjointView<Eigen::Lower>();
  return MomentCache(n, std::move(mean), std::move(cov), MomentMode::exhaustive());
}

MomentCache sampled_cache(const JointPrior& priors, const Sampler& sampler, MomentMode mode) {
  if (mode.samples < 2) throw ConfigError("Monte Carlo moments need at least two samples",
                                          "samples");
  const std::size_t n = priors.size();
  const auto dim = static_cast<Eigen::Index>(3 * n + 1);
  const double count = static_cast<double>(mode.samples);
  Eigen::VectorXd z(dim), mean = Eigen::VectorXd::Zero(dim);
  std::vector<int> idx(n);
  auto draw = [&](Rng& rng) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = sample_index(priors[i], rng);
    sampler.fill(idx.data(), z);
  };

  Rng rng = make_rng(mode.seed, kMomentStream);
  for (std::uint64_t s = 0; s < mode.samples; ++s) {
    draw(rng);
    mean += z;
  }
  mean /= count;

  // Second pass over the identical draws, centered on the first-pass mean.
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd product(dim, dim);
  rng = make_rng(mode.seed, kMomentStream);
  for (std::uint64_t s = 0; s < mode.samples; ++s) {
    draw(rng);
    z -= mean;
    product.noalias() = z * z.transpose();
    sum += product;
    sum_sq += product.cwiseProduct(product);
  }
  Eigen::MatrixXd cov = sum / (count - 1);
  // Standard error of each covariance entry from the spread of the centered
  // products; of each mean from the sample variance.
  Eigen::MatrixXd product_var = (sum_sq / count - (sum / count).cwiseAbs2()) * count / (count - 1);
  Eigen::MatrixXd cov_se = (product_var.cwiseMax(0.0) / count).cwiseSqrt();
  Eigen::VectorXd mean_se = (cov.diagonal().cwiseMax(0.0) / count).cwiseSqrt();
  return MomentCache(n, std::move(mean), std::move(cov), mode, std::move(mean_se),
                     std::move(cov_se));
}

}  // namespace

MomentCache build_moment_cache(const JointPrior& priors, const CostVector& costs,
                               const ValuationTable& table, MomentMode mode,
                               const SamplingPlan& psi_plan) {
  const std::size_t n = priors.size();
  if (n < 2) throw DegenerateGroup("fairness moments need at least two occupants");
  if (mode.kind == MomentMode::Kind::Exhaustive &&
      (n > kMaxExhaustiveOccupants || detail::profile_count(n) > kMaxExhaustiveProfiles)) {
    throw StateSpaceOverflow(std::to_string(n) +
                             " occupants exceed the exhaustive limit of 10^6 joint profiles; "
                             "use Monte Carlo moments");
  }
  const auto ext = externality_table(priors, costs, table, psi_plan);
  const OutcomeSelector selector(costs, table);
  const Sampler sampler{priors, selector, ext};
  if (mode.kind == MomentMode::Kind::Exhaustive) return exhaustive_cache(priors, sampler);
  return sampled_cache(priors, sampler, mode);
}

MomentCache build_moment_cache(const PriorSet& priors, const std::vector<OccupantId>& occupants,
                               int temperature, const CostVector& costs,
                               const ValuationTable& table, MomentMode mode,
                               const SamplingPlan& psi_plan) {
  return build_moment_cache(priors.joint(occupants, temperature), costs, table, mode, psi_plan);
}

}  // namespace acpolicy
