#include "acpolicy/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "acpolicy/errors.hpp"

namespace acpolicy {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index idx(std::size_t i) { return static_cast<Index>(i); }

void check_size(const MomentCache& cache, std::size_t n) {
  if (cache.size() != n) {
    throw ConstraintViolation("moment cache has " + std::to_string(cache.size()) +
                              " occupants, parameters have " + std::to_string(n));
  }
}

// Coefficients of psi_j.
VectorXd psi_coefficients(const MomentCache& c, const VectorXd& alpha, std::size_t j) {
  VectorXd g = VectorXd::Zero(c.dim());
  g[c.a(j)] = 1.0;
  g[c.b(j)] = -(alpha.sum() - alpha[idx(j)]);
  return g;
}

// Coefficients of u_i - alpha_i dC + psi_i, the part of pi_i that does not
// involve beta.
VectorXd own_coefficients(const MomentCache& c, const VectorXd& alpha, std::size_t i) {
  VectorXd r = psi_coefficients(c, alpha, i);
  r[c.u(i)] += 1.0;
  r[c.cost()] -= alpha[idx(i)];
  return r;
}

// Columns: coefficient vectors of pi_1..pi_n.
MatrixXd coefficient_matrix(const MomentCache& c, const VectorXd& alpha, const MatrixXd& beta) {
  const std::size_t n = c.size();
  MatrixXd g(c.dim(), idx(n)), w(c.dim(), idx(n));
  for (std::size_t j = 0; j < n; ++j) g.col(idx(j)) = psi_coefficients(c, alpha, j);
  for (std::size_t i = 0; i < n; ++i) {
    w.col(idx(i)) = own_coefficients(c, alpha, i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) w.col(idx(i)) -= beta(idx(i), idx(j)) * g.col(idx(j));
    }
  }
  return w;
}

double spread(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

// Euclidean projection onto the probability simplex.
VectorXd project_simplex(const VectorXd& y) {
  std::vector<double> sorted(y.data(), y.data() + y.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0, tau = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0) tau = t;
  }
  VectorXd x = (y.array() - tau).cwiseMax(0.0);
  // Remove rounding drift so the sum is one to machine precision.
  const double total = x.sum();
  if (total > 0) x /= total;
  return x;
}

// Off-diagonal beta entries in row-major order.
struct BetaIndex {
  std::size_t n;
  Index operator()(std::size_t i, std::size_t j) const {
    return idx(i * (n - 1) + (j < i ? j : j - 1));
  }
  Index count() const { return idx(n * (n - 1)); }
};

struct Constraints {
  MatrixXd A;
  VectorXd b;
};

// Rows 0..n-1: column sums of beta equal one. Rows n..2n-2: E[pi_i] equals
// E[pi_n] for i < n.
Constraints constraint_system(const MomentCache& c, const VectorXd& alpha) {
  const std::size_t n = c.size();
  const BetaIndex var{n};
  const std::size_t rows = 2 * n - 1;
  Constraints k{MatrixXd::Zero(idx(rows), var.count()), VectorXd::Zero(idx(rows))};
  VectorXd m(idx(n)), own(idx(n));
  for (std::size_t j = 0; j < n; ++j) {
    m[idx(j)] = c.mean().dot(psi_coefficients(c, alpha, j));
    own[idx(j)] = c.mean().dot(own_coefficients(c, alpha, j));
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (i != j) k.A(idx(j), var(i, j)) = 1.0;
    }
    k.b[idx(j)] = 1.0;
  }
  const std::size_t last = n - 1;
  for (std::size_t i = 0; i < last; ++i) {
    const Index row = idx(n + i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) k.A(row, var(i, j)) -= m[idx(j)];
      if (j != last) k.A(row, var(last, j)) += m[idx(j)];
    }
    k.b[row] = own[idx(last)] - own[idx(i)];
  }
  return k;
}

MatrixXd beta_from(const VectorXd& x, std::size_t n) {
  const BetaIndex var{n};
  MatrixXd beta = MatrixXd::Zero(idx(n), idx(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) beta(idx(i), idx(j)) = x[var(i, j)];
  return beta;
}

constexpr double kRankThreshold = 1e-10;

}  // namespace

Eigen::VectorXd net_benefit_coefficients(const MomentCache& cache, const MechanismParams& params,
                                         std::size_t i) {
  check_size(cache, params.size());
  return coefficient_matrix(cache, params.alpha(), params.beta()).col(idx(i));
}

std::vector<double> exante_net_benefits(const MomentCache& cache, const MechanismParams& params) {
  check_size(cache, params.size());
  const VectorXd e = coefficient_matrix(cache, params.alpha(), params.beta()).transpose() *
                     cache.mean();
  return {e.data(), e.data() + e.size()};
}

double expost_variance_sum(const MomentCache& cache, const MechanismParams& params) {
  check_size(cache, params.size());
  const MatrixXd w = coefficient_matrix(cache, params.alpha(), params.beta());
  return std::max(0.0, (w.transpose() * cache.covariance() * w).trace());
}

ReducedObjective reduced_objective(const MomentCache& c, const Eigen::VectorXd& alpha) {
  const std::size_t n = c.size();
  if (n < 2) throw DegenerateGroup("fairness needs at least two occupants");
  check_size(c, static_cast<std::size_t>(alpha.size()));
  const BetaIndex var{n};
  const MatrixXd& S = c.covariance();
  const VectorXd& mu = c.mean();

  MatrixXd g(c.dim(), idx(n)), r(c.dim(), idx(n));
  for (std::size_t j = 0; j < n; ++j) {
    g.col(idx(j)) = psi_coefficients(c, alpha, j);
    r.col(idx(j)) = own_coefficients(c, alpha, j);
  }
  const MatrixXd sg = S * g;
  const MatrixXd m = g.transpose() * sg;         // g_j' S g_k
  const MatrixXd gsr = sg.transpose() * r;       // g_j' S r_i at (j, i)

  // V = 1/2 x'Hx + f'x + const over the off-diagonal beta entries.
  const Index p = var.count();
  MatrixXd H = MatrixXd::Zero(p, p);
  VectorXd f(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      f[var(i, j)] = -2.0 * gsr(idx(j), idx(i));
      for (std::size_t k = 0; k < n; ++k) {
        if (k != i) H(var(i, j), var(i, k)) = 2.0 * m(idx(j), idx(k));
      }
    }
  }

  const auto [A, b] = constraint_system(c, alpha);
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  svd.setThreshold(kRankThreshold);
  const Index rank = svd.rank();
  const VectorXd x0 = svd.solve(b);

  ReducedObjective out;
  const double residual = (A * x0 - b).lpNorm<Eigen::Infinity>();
  out.feasible = residual <= 1e-9 * std::max(1.0, b.lpNorm<Eigen::Infinity>());
  if (!out.feasible) return out;

  VectorXd x = x0;
  const Index free = p - rank;
  if (free > 0) {
    const MatrixXd Z = svd.matrixV().rightCols(free);
    const MatrixXd reduced = Z.transpose() * H * Z;
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(reduced);
    cod.setThreshold(1e-12);
    out.singular = cod.rank() < free;
    x += Z * cod.solve(-Z.transpose() * (H * x0 + f));
  }

  // Multipliers from H x + f + A' lambda = 0, least squares through the SVD.
  const VectorXd grad_x = H * x + f;
  VectorXd lambda = VectorXd::Zero(A.rows());
  {
    const VectorXd proj = svd.matrixV().leftCols(rank).transpose() * (-grad_x);
    lambda = svd.matrixU().leftCols(rank) *
             (proj.array() / svd.singularValues().head(rank).array()).matrix();
  }

  out.beta = beta_from(x, n);
  const MatrixXd w = coefficient_matrix(c, alpha, out.beta);
  const MatrixXd sw = S * w;
  out.value = (w.transpose() * sw).trace();

  // dF/dalpha_k = dV/dalpha_k + sum_i lambda_{n+i} d(stage-1 row i)/dalpha_k
  // with dw_i/dalpha_k = [i = k](-e_c + e_{b_k}) - beta_ik e_{b_k}.
  auto mean_dw = [&](std::size_t i, std::size_t k) {
    double d = -out.beta(idx(i), idx(k)) * mu[c.b(k)];
    if (i == k) d += -mu[c.cost()] + mu[c.b(k)];
    return d;
  };
  out.gradient = VectorXd::Zero(idx(n));
  const std::size_t last = n - 1;
  for (std::size_t k = 0; k < n; ++k) {
    double d = 2.0 * (-sw(c.cost(), idx(k)) + sw(c.b(k), idx(k)));
    for (std::size_t i = 0; i < n; ++i) {
      d -= 2.0 * out.beta(idx(i), idx(k)) * sw(c.b(k), idx(i));
    }
    for (std::size_t i = 0; i < last; ++i) {
      d += lambda[idx(n + i)] * (mean_dw(i, k) - mean_dw(last, k));
    }
    out.gradient[idx(k)] = d;
  }
  return out;
}

std::string to_string(SolverStatus s) {
  switch (s) {
    case SolverStatus::Exact: return "Exact";
    case SolverStatus::ProjectedGradient: return "ProjectedGradient";
    case SolverStatus::Infeasible: return "Infeasible";
  }
  return "?";
}

namespace {

SolverStatus status_from_string(const std::string& s) {
  if (s == "Exact") return SolverStatus::Exact;
  if (s == "ProjectedGradient") return SolverStatus::ProjectedGradient;
  if (s == "Infeasible") return SolverStatus::Infeasible;
  throw ConfigError("unknown solver status '" + s + "'", "solver_status");
}

FairnessSolution finish(const MomentCache& cache, MechanismParams params, SolverStatus status,
                        std::size_t iterations, const FairnessOptions& options) {
  const auto baseline = MechanismParams::standard(cache.size());
  FairnessSolution s{.params = std::move(params)};
  s.exante_benefits = exante_net_benefits(cache, s.params);
  s.equality_residual = spread(s.exante_benefits);
  s.sum_variance = expost_variance_sum(cache, s.params);
  s.baseline_sum_variance = expost_variance_sum(cache, baseline);
  s.baseline_equality_residual = spread(exante_net_benefits(cache, baseline));
  s.status = s.equality_residual > options.equality_tolerance ? SolverStatus::Infeasible : status;
  s.iterations = iterations;
  s.provenance = cache.mode();
  return s;
}

MatrixXd swap_beta() {
  MatrixXd beta(2, 2);
  beta << 0.0, 1.0, 1.0, 0.0;
  return beta;
}

// Two occupants: beta is forced and the stage-1 equality pins alpha_1 =
// 1/2 + (E[u_1] - E[u_2]) / (2 E[dC]).
FairnessSolution solve_pair(const MomentCache& c, const FairnessOptions& options) {
  const double eu1 = c.mean()[c.u(0)], eu2 = c.mean()[c.u(1)], d = c.mean()[c.cost()];
  auto params_at = [](double a1) {
    VectorXd alpha(2);
    alpha << a1, 1.0 - a1;
    return MechanismParams(alpha, swap_beta());
  };
  if (std::abs(d) > 1e-15) {
    const double a1 = 0.5 + (eu1 - eu2) / (2.0 * d);
    if (a1 >= -1e-12 && a1 <= 1.0 + 1e-12) {
      return finish(c, params_at(std::clamp(a1, 0.0, 1.0)), SolverStatus::Exact, 0, options);
    }
    return finish(c, params_at(std::clamp(a1, 0.0, 1.0)), SolverStatus::Infeasible, 0, options);
  }
  if (std::abs(eu1 - eu2) > options.equality_tolerance) {
    return finish(c, params_at(0.5), SolverStatus::Infeasible, 0, options);
  }
  // Zero expected cost: every alpha meets stage 1 and the variance is a
  // quadratic in alpha_1; fit it through three points.
  const double v0 = expost_variance_sum(c, params_at(0.0));
  const double vh = expost_variance_sum(c, params_at(0.5));
  const double v1 = expost_variance_sum(c, params_at(1.0));
  const double qa = 2 * v0 - 4 * vh + 2 * v1, qb = -3 * v0 + 4 * vh - v1;
  if (qa > 1e-15) {
    const double a1 = -qb / (2 * qa);
    if (a1 > 0.0 && a1 < 1.0) return finish(c, params_at(a1), SolverStatus::Exact, 0, options);
    return finish(c, params_at(std::clamp(a1, 0.0, 1.0)), SolverStatus::ProjectedGradient, 0,
                  options);
  }
  return finish(c, params_at(v0 <= v1 ? 0.0 : 1.0), SolverStatus::ProjectedGradient, 0, options);
}

// Minimal stage-1 residual at standard cost shares: column sums exact,
// equality rows in least squares.
FairnessSolution least_residual(const MomentCache& c, const FairnessOptions& options) {
  const std::size_t n = c.size();
  const auto standard = MechanismParams::standard(n);
  const auto [A, b] = constraint_system(c, standard.alpha());
  const Index p = A.cols();
  const auto ni = idx(n);
  VectorXd x(p);
  const BetaIndex var{n};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) x[var(i, j)] = standard.beta()(idx(i), idx(j));
  Eigen::JacobiSVD<MatrixXd> columns(A.topRows(ni), Eigen::ComputeFullV);
  columns.setThreshold(kRankThreshold);
  const MatrixXd Z = columns.matrixV().rightCols(p - columns.rank());
  const MatrixXd eq = A.bottomRows(A.rows() - ni);
  const VectorXd target = b.tail(A.rows() - ni) - eq * x;
  x += Z * (eq * Z).completeOrthogonalDecomposition().solve(target);
  return finish(c, MechanismParams(standard.alpha(), beta_from(x, n)), SolverStatus::Infeasible,
                0, options);
}

}  // namespace

FairnessSolution optimize_fairness(const MomentCache& cache, const FairnessOptions& options) {
  const std::size_t n = cache.size();
  if (n < 2) throw DegenerateGroup("fairness needs at least two occupants");
  if (n == 2) return solve_pair(cache, options);

  VectorXd alpha = VectorXd::Constant(idx(n), 1.0 / static_cast<double>(n));
  ReducedObjective current = reduced_objective(cache, alpha);
  if (!current.feasible) return least_residual(cache, options);

  auto gradient_projection = [&](const VectorXd& a, const VectorXd& g) {
    return (a - project_simplex(a - g)).lpNorm<Eigen::Infinity>();
  };

  double step = 1.0;
  bool converged = false;
  std::size_t iterations = 0;
  VectorXd previous_alpha, previous_gradient;
  while (iterations < options.max_iterations) {
    if (gradient_projection(alpha, current.gradient) < options.gradient_tolerance) {
      converged = true;
      break;
    }
    if (iterations > 0) {
      // Barzilai-Borwein step from the last move.
      const VectorXd s = alpha - previous_alpha;
      const VectorXd y = current.gradient - previous_gradient;
      const double sy = s.dot(y);
      step = sy > 0 ? std::clamp(s.squaredNorm() / sy, 1e-12, 1e6) : std::min(step * 2, 1e6);
    }
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      const VectorXd candidate = project_simplex(alpha - step * current.gradient);
      const VectorXd move = candidate - alpha;
      if (move.lpNorm<Eigen::Infinity>() == 0.0) break;
      ReducedObjective next = reduced_objective(cache, candidate);
      if (next.feasible && next.value <= current.value + 1e-4 * current.gradient.dot(move)) {
        previous_alpha = alpha;
        previous_gradient = current.gradient;
        alpha = candidate;
        current = std::move(next);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    ++iterations;
    if (!accepted) break;  // no further decrease at machine precision
  }

  const bool interior = alpha.minCoeff() > 1e-12;
  const SolverStatus status = converged && interior && !current.singular
                                  ? SolverStatus::Exact
                                  : SolverStatus::ProjectedGradient;
  return finish(cache, MechanismParams(alpha, current.beta), status, iterations, options);
}

nlohmann::json FairnessSolution::to_json() const {
  const auto& a = params.alpha();
  const auto& b = params.beta();
  nlohmann::json beta = nlohmann::json::array();
  for (Index i = 0; i < b.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < b.cols(); ++j) row.push_back(b(i, j));
    beta.push_back(std::move(row));
  }
  return {{"alpha", std::vector<double>(a.data(), a.data() + a.size())},
          {"beta", std::move(beta)},
          {"exante_benefits", exante_benefits},
          {"equality_residual", equality_residual},
          {"sum_variance", sum_variance},
          {"baseline_sum_variance", baseline_sum_variance},
          {"baseline_equality_residual", baseline_equality_residual},
          {"solver_status", to_string(status)},
          {"iterations", iterations},
          {"provenance", provenance.to_json()}};
}

FairnessSolution FairnessSolution::from_json(const nlohmann::json& doc) {
  try {
    const auto alpha_v = doc.at("alpha").get<std::vector<double>>();
    const auto beta_v = doc.at("beta").get<std::vector<std::vector<double>>>();
    const auto n = idx(alpha_v.size());
    VectorXd alpha(n);
    MatrixXd beta(n, n);
    for (Index i = 0; i < n; ++i) {
      alpha[i] = alpha_v[static_cast<std::size_t>(i)];
      if (beta_v.size() != alpha_v.size() ||
          beta_v[static_cast<std::size_t>(i)].size() != alpha_v.size()) {
        throw ConfigError("beta must be square and match alpha", "beta");
      }
      for (Index j = 0; j < n; ++j) {
        beta(i, j) = beta_v[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
    }
    FairnessSolution s{.params = MechanismParams(alpha, beta)};
    s.exante_benefits = doc.at("exante_benefits").get<std::vector<double>>();
    s.equality_residual = doc.at("equality_residual").get<double>();
    s.sum_variance = doc.at("sum_variance").get<double>();
    s.baseline_sum_variance = doc.at("baseline_sum_variance").get<double>();
    s.baseline_equality_residual = doc.value("baseline_equality_residual", 0.0);
    s.status = status_from_string(doc.at("solver_status").get<std::string>());
    s.iterations = doc.value("iterations", std::size_t{0});
    const auto& prov = doc.at("provenance");
    if (prov.at("mode").get<std::string>() == "monte-carlo") {
      s.provenance = MomentMode::monte_carlo(prov.at("samples").get<std::uint64_t>(),
                                             prov.at("seed").get<std::uint64_t>());
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed fairness solution: ") + e.what(), "fairness");
  }
}

}  // namespace acpolicy
