#include "acpolicy/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <openssl/evp.h>

#include "acpolicy/errors.hpp"
#include "acpolicy/money.hpp"
#include "acpolicy/serialization.hpp"
#include "enumerate.hpp"

namespace acpolicy::sim {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- priors

TypeDistribution preference_distribution(double deviation, double kappa) {
  std::array<double, 3> group{};
  double total = 0.0;
  for (int s = -1; s <= 1; ++s) {
    const double z = s + deviation;
    total += group[s + 1] = std::exp(-kappa * z * z);
  }
  TypeDistribution p;
  for (int k = 0; k < kTypeCount; ++k) p[k] = group[k / 3] / (3.0 * total);
  return p;
}

std::vector<double> PriorGenerator::preferences(std::size_t n) const {
  if (kind == Kind::Custom) {
    if (preferred.size() != n) {
      throw ConfigError("custom generator needs one preferred temperature per occupant",
                        "priors.preferred");
    }
    return preferred;
  }
  std::vector<double> out(n, center);
  if (kind != Kind::Symmetric && n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = center + spread * (static_cast<double>(i) / static_cast<double>(n - 1) - 0.5);
    }
  }
  return out;
}

PriorSet PriorGenerator::generate(const std::vector<OccupantId>& occupants, int temp_lower,
                                  int temp_upper) const {
  if (!(kappa > 0)) throw ConfigError("kappa must be positive", "priors.kappa");
  const auto prefs = preferences(occupants.size());
  PriorSet out;
  for (std::size_t i = 0; i < occupants.size(); ++i) {
    for (int t = temp_lower; t <= temp_upper; ++t) {
      out.set(occupants[i], t, preference_distribution(t - prefs[i], kappa));
    }
  }
  return out;
}

namespace {

constexpr std::array<std::pair<PriorGenerator::Kind, const char*>, 4> kGeneratorNames = {{
    {PriorGenerator::Kind::Symmetric, "symmetric"},
    {PriorGenerator::Kind::SkewedWarm, "skewed-warm"},
    {PriorGenerator::Kind::SkewedCool, "skewed-cool"},
    {PriorGenerator::Kind::Custom, "custom"},
}};

template <typename T>
T field(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("wrong type for '") + key + "'", key);
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

json PriorGenerator::to_json() const {
  std::string name;
  for (const auto& [k, s] : kGeneratorNames) {
    if (k == kind) name = s;
  }
  json doc = {{"kind", name}, {"center", center}, {"spread", spread}, {"kappa", kappa}};
  if (kind == Kind::Custom) doc["preferred"] = preferred;
  return doc;
}

PriorGenerator PriorGenerator::from_json(const json& doc) {
  PriorGenerator g;
  const auto name = field(doc, "kind", std::string("symmetric"));
  bool known = false;
  for (const auto& [k, s] : kGeneratorNames) {
    if (name == s) {
      g.kind = k;
      known = true;
    }
  }
  if (!known) throw ConfigError("unknown prior generator '" + name + "'", "priors.kind");
  switch (g.kind) {
    case Kind::Symmetric: g.center = 24.0; g.spread = 0.0; break;
    case Kind::SkewedWarm: g.center = 25.0; break;
    case Kind::SkewedCool: g.center = 23.0; break;
    case Kind::Custom: break;
  }
  g.center = field(doc, "center", g.center);
  g.spread = field(doc, "spread", g.spread);
  g.kappa = field(doc, "kappa", g.kappa);
  g.preferred = field(doc, "preferred", g.preferred);
  return g;
}

// ---------------------------------------------------------------- scenarios

std::string_view to_string(PolicyKind kind) noexcept {
  switch (kind) {
    case PolicyKind::Generalized: return "Generalized";
    case PolicyKind::StandardAGV: return "StandardAGV";
    case PolicyKind::FixedSetpoint: return "FixedSetpoint";
  }
  return "?";
}

json Policy::to_json() const {
  json doc = {{"kind", to_string(kind)}};
  if (kind == PolicyKind::FixedSetpoint) doc["fixed_setpoint"] = fixed_setpoint;
  return doc;
}

ScenarioSpec ScenarioSpec::from_json(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("scenario must be a JSON object");
  ScenarioSpec s;
  s.name = field(doc, "name", s.name);
  if (!doc.contains("seed")) throw ConfigError("scenario seed is mandatory", "seed");
  s.seed = field(doc, "seed", s.seed);
  s.rounds = field(doc, "rounds", s.rounds);
  s.seed_session_priors = field(doc, "seed_session_priors", s.seed_session_priors);

  json session = doc.value("session", json::object());
  if (doc.contains("weather")) session["weather"] = doc.at("weather");
  if (!session.contains("seed")) session["seed"] = s.seed;
  s.session = SessionConfig::from_json(session, base_dir);

  const std::string policy = field(doc, "policy", std::string("Generalized"));
  if (policy == "Generalized") {
    s.policy.kind = PolicyKind::Generalized;
  } else if (policy == "StandardAGV") {
    s.policy.kind = PolicyKind::StandardAGV;
  } else if (policy == "FixedSetpoint") {
    s.policy.kind = PolicyKind::FixedSetpoint;
    s.policy.fixed_setpoint = field(doc, "fixed_setpoint", s.session.base_setpoint);
  } else {
    throw ConfigError("unknown policy '" + policy + "'", "policy");
  }
  if (s.policy.kind == PolicyKind::FixedSetpoint &&
      (s.policy.fixed_setpoint < s.session.temp_lower ||
       s.policy.fixed_setpoint > s.session.temp_upper)) {
    throw ConfigError("fixed set-point outside the temperature range", "fixed_setpoint");
  }

  const json priors = doc.value("priors", json{{"generator", {{"kind", "symmetric"}}}});
  if (priors.contains("generator")) {
    s.generator = PriorGenerator::from_json(priors.at("generator"));
    s.priors = s.generator->generate(s.session.occupancy, s.session.temp_lower,
                                     s.session.temp_upper);
  } else if (priors.contains("file")) {
    s.priors = PriorSet::load(resolve(base_dir, priors.at("file").get<std::string>()));
  } else if (priors.contains("table")) {
    s.priors = PriorSet::from_json(priors.at("table"));
  } else {
    throw ConfigError("priors need a generator, file or table", "priors");
  }
  s.probe.temperature = s.session.initial_temp;
  if (doc.contains("probe")) {
    const auto& probe = doc.at("probe");
    s.probe.temperature = field(probe, "temperature", s.probe.temperature);
    if (probe.contains("increments")) {
      const auto& inc = probe.at("increments");
      if (!inc.is_array() || inc.size() != kOutcomeCount) {
        throw ConfigError("increments are [cooler, stay, warmer]", "probe.increments");
      }
      std::array<std::optional<double>, kOutcomeCount> v;
      for (int k = 0; k < kOutcomeCount; ++k) {
        if (!inc[k].is_null()) v[k] = inc[k].get<double>();
      }
      s.probe.increments = v;
    }
    if (s.probe.temperature < s.session.temp_lower || s.probe.temperature > s.session.temp_upper) {
      throw ConfigError("probe temperature outside the range", "probe.temperature");
    }
  }
  s.prices = field(doc, "prices", s.prices);
  if (doc.contains("audit_params")) {
    try {
      const auto& ap = doc.at("audit_params");
      const auto alpha = ap.at("alpha").get<std::vector<double>>();
      const auto beta = ap.at("beta").get<std::vector<std::vector<double>>>();
      Eigen::VectorXd a(static_cast<Eigen::Index>(alpha.size()));
      Eigen::MatrixXd b(a.size(), a.size());
      for (Eigen::Index i = 0; i < a.size(); ++i) {
        a[i] = alpha[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < a.size(); ++j) {
          b(i, j) = beta.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(j));
        }
      }
      if (alpha.size() != s.session.occupancy.size()) throw std::out_of_range("size");
      s.audit_params = MechanismParams::unvalidated(a, b);
    } catch (const std::exception&) {
      throw ConfigError("audit_params need n alphas and an n x n beta", "audit_params");
    }
  }
  s.expect = doc.value("expect", json::object());

  for (const auto& occ : s.session.occupancy) {
    for (int t = s.session.temp_lower; t <= s.session.temp_upper; ++t) {
      if (!s.priors.contains(occ, t)) {
        throw ConfigError("no prior for '" + occ + "' at " + std::to_string(t) + " C", "priors");
      }
    }
  }
  return s;
}

ScenarioSpec ScenarioSpec::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario " + path.string(), "config");
  try {
    return from_json(json::parse(in), path.parent_path());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what(), "config");
  }
}

json ScenarioSpec::to_json() const {
  json probe_doc = {{"temperature", probe.temperature}};
  if (probe.increments) {
    json inc = json::array();
    for (const auto& v : *probe.increments) inc.push_back(v ? json(*v) : json(nullptr));
    probe_doc["increments"] = inc;
  }
  json doc = {{"name", name},
          {"session", session.to_json()},
          {"priors", generator ? json{{"generator", generator->to_json()}}
                               : json{{"table", priors.to_json()}}},
          {"seed_session_priors", seed_session_priors},
          {"policy", to_string(policy.kind)},
          {"fixed_setpoint", policy.fixed_setpoint},
          {"rounds", rounds},
          {"seed", seed},
          {"probe", probe_doc},
          {"prices", prices},
          {"expect", expect}};
  if (audit_params) {
    doc["audit_params"] = serial::params_to_json(*audit_params);
  }
  return doc;
}

CostVector probe_costs(const ScenarioSpec& spec) {
  if (spec.probe.increments) {
    return CostVector::from_increments(spec.probe.temperature, *spec.probe.increments);
  }
  return round_costs(spec.session, 0, spec.probe.temperature);
}

JointPrior probe_priors(const ScenarioSpec& spec) {
  return spec.priors.joint(spec.session.occupancy, spec.probe.temperature);
}

ScenarioSpec ScenarioSpec::with_policy(Policy p) const {
  ScenarioSpec out = *this;
  out.policy = p;
  return out;
}

ScenarioSpec ScenarioSpec::with_seed(std::uint64_t s) const {
  ScenarioSpec out = *this;
  out.seed = s;
  out.session.seed = s;
  return out;
}

TypeProfile sample_profile(const PriorSet& priors, const std::vector<OccupantId>& occupants,
                           int temperature, Rng& rng) {
  std::vector<TypeReport> reports;
  reports.reserve(occupants.size());
  for (const auto& occ : occupants) {
    reports.push_back({occ, ComfortType::from_index(sample_index(priors.at(occ, temperature), rng))});
  }
  return TypeProfile(std::move(reports));
}

double RoundRecord::budget_residual() const {
  if (!payments) return 0.0;
  double total = 0.0;
  for (double t : *payments) total += t;
  return total - incremental_cost;
}

namespace {

RoundRecord record_round(std::size_t index, int T0, Phase phase, const Outcome& outcome,
                         const TypeProfile& profile, const CostVector& costs,
                         const ValuationTable& table,
                         const std::optional<std::vector<double>>& payments) {
  RoundRecord r;
  r.round = index;
  r.T0 = T0;
  r.phase = phase;
  r.outcome = outcome;
  for (auto t : profile.types()) {
    r.types.push_back(t.id());
    r.valuations.push_back(table.value(t, outcome.kind));
  }
  r.welfare = welfare(profile, outcome, costs, table);
  r.best_alternative_welfare = -std::numeric_limits<double>::infinity();
  for (auto kind : costs.feasible_kinds()) {
    if (kind == outcome.kind) continue;
    r.best_alternative_welfare =
        std::max(r.best_alternative_welfare, welfare(profile, kind, costs, table).welfare);
  }
  r.cost = costs.absolute(outcome.kind);
  r.incremental_cost = costs.incremental(outcome.kind);
  r.payments = payments;
  r.net_benefits = r.valuations;
  if (payments) {
    for (std::size_t i = 0; i < r.net_benefits.size(); ++i) r.net_benefits[i] -= (*payments)[i];
  }
  return r;
}

}  // namespace

void aggregate(SessionResult& result) {
  const std::size_t n = result.occupants.size();
  const auto rounds = static_cast<double>(result.rounds.size());
  result.mean_comfort = 0.0;
  result.total_cost = 0.0;
  result.mean_pi.assign(n, 0.0);
  result.var_pi.assign(n, 0.0);
  if (result.rounds.empty()) return;
  for (const auto& r : result.rounds) {
    double comfort = 0.0;
    for (double u : r.valuations) comfort += u;
    result.mean_comfort += comfort;
    result.total_cost += r.cost;
    for (std::size_t i = 0; i < n; ++i) result.mean_pi[i] += r.net_benefits[i];
  }
  result.mean_comfort /= rounds;
  for (auto& m : result.mean_pi) m /= rounds;
  if (result.rounds.size() < 2) return;
  for (const auto& r : result.rounds) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = r.net_benefits[i] - result.mean_pi[i];
      result.var_pi[i] += d * d;
    }
  }
  for (auto& v : result.var_pi) v /= rounds - 1.0;
}

SessionResult run_scenario(const ScenarioSpec& spec) {
  SessionConfig cfg = spec.session;
  SessionResult result;
  result.name = spec.name;
  result.policy = spec.policy;
  result.occupants = cfg.occupancy;
  result.seed = spec.seed;
  result.config_hash = sha256_hex(spec.to_json().dump());
  result.generator = spec.generator ? spec.generator->to_json() : json(nullptr);

  if (spec.policy.kind == PolicyKind::FixedSetpoint) {
    const int T = spec.policy.fixed_setpoint;
    for (std::size_t r = 0; r < spec.rounds; ++r) {
      const CostVector costs = round_costs(cfg, r, T);
      Rng rng = make_rng(spec.seed, r);
      const TypeProfile profile = sample_profile(spec.priors, cfg.occupancy, T, rng);
      result.rounds.push_back(record_round(r, T, Phase::FairAllocation,
                                           Outcome::at(OutcomeKind::Stay, T), profile, costs,
                                           cfg.valuations, std::nullopt));
      result.rounds.back().solver_status = "none";
    }
    aggregate(result);
    return result;
  }

  cfg.payment_rule = spec.policy.kind == PolicyKind::StandardAGV ? PaymentRule::Standard
                                                                  : PaymentRule::Generalized;
  if (spec.seed_session_priors) cfg.initial_priors = spec.priors;
  ManualClock clock(0);
  Session session = Session::create(spec.name, cfg, clock);
  for (std::size_t r = 0; r < spec.rounds; ++r) {
    const Round& open = session.open_round();
    const int T0 = open.T0;
    Rng rng = make_rng(spec.seed, r);
    const TypeProfile profile = sample_profile(spec.priors, cfg.occupancy, T0, rng);
    for (const auto& rep : profile.reports()) session.submit_report(rep.occupant, rep.type);
    clock.advance(cfg.round_length_ms);
    const Round& decided = session.close_round();
    const auto& d = *decided.decision;
    result.rounds.push_back(record_round(r, T0, decided.phase, d.outcome, profile,
                                         decided.costs, cfg.valuations, d.payments));
    std::string status = "none";
    if (decided.phase == Phase::FairAllocation) {
      status = "standard";
      if (cfg.payment_rule == PaymentRule::Generalized) {
        const auto it = session.state().fairness().find(T0);
        if (it != session.state().fairness().end()) status = to_string(it->second.solution.status);
      }
    }
    result.rounds.back().solver_status = status;
  }
  aggregate(result);
  return result;
}

// ---------------------------------------------------------------- results

json SessionResult::to_json() const {
  using money::exact;
  json rounds_doc = json::array();
  for (const auto& r : rounds) {
    std::vector<std::string> u, pi;
    for (double v : r.valuations) u.push_back(exact(v));
    for (double v : r.net_benefits) pi.push_back(exact(v));
    rounds_doc.push_back(
        {{"round", r.round},
         {"T0", r.T0},
         {"phase", to_string(r.phase)},
         {"outcome", to_string(r.outcome.kind)},
         {"setpoint", r.outcome.setpoint},
         {"types", r.types},
         {"welfare", serial::welfare_to_json(r.welfare)},
         {"best_alternative_welfare", exact(r.best_alternative_welfare)},
         {"cost", exact(r.cost)},
         {"incremental_cost", exact(r.incremental_cost)},
         {"valuations", u},
         {"payments", r.payments ? serial::amounts_to_json(*r.payments) : json(nullptr)},
         {"net_benefits", pi},
         {"solver_status", r.solver_status}});
  }
  json occ = json::array();
  for (std::size_t i = 0; i < occupants.size(); ++i) {
    occ.push_back({{"occupant", occupants[i]},
                   {"mean_pi", exact(mean_pi.at(i))},
                   {"var_pi", exact(var_pi.at(i))}});
  }
  return {{"name", name},
          {"policy", policy.to_json()},
          {"occupants", occupants},
          {"rounds", std::move(rounds_doc)},
          {"aggregates",
           {{"mean_comfort", exact(mean_comfort)},
            {"total_cost", exact(total_cost)},
            {"per_occupant", std::move(occ)}}},
          {"provenance", {{"seed", seed}, {"config_hash", config_hash}, {"generator", generator}}}};
}

SessionResult SessionResult::from_json(const json& doc) {
  try {
    SessionResult r;
    r.name = doc.at("name").get<std::string>();
    const auto& pol = doc.at("policy");
    const auto kind = pol.at("kind").get<std::string>();
    r.policy.kind = kind == "FixedSetpoint" ? PolicyKind::FixedSetpoint
                    : kind == "StandardAGV" ? PolicyKind::StandardAGV
                                            : PolicyKind::Generalized;
    r.policy.fixed_setpoint = pol.value("fixed_setpoint", 22);
    r.occupants = doc.at("occupants").get<std::vector<OccupantId>>();
    for (const auto& item : doc.at("rounds")) {
      RoundRecord rec;
      rec.round = item.at("round").get<std::size_t>();
      rec.T0 = item.at("T0").get<int>();
      rec.phase = item.at("phase").get<std::string>() == "FairAllocation"
                      ? Phase::FairAllocation
                      : Phase::PreferenceCollection;
      rec.outcome = {outcome_kind_from_string(item.at("outcome").get<std::string>()),
                     item.at("setpoint").get<int>()};
      rec.types = item.at("types").get<std::vector<int>>();
      rec.welfare = serial::welfare_from_json(item.at("welfare"));
      rec.best_alternative_welfare =
          money::parse(item.at("best_alternative_welfare").get<std::string>());
      rec.cost = money::parse(item.at("cost").get<std::string>());
      rec.incremental_cost = money::parse(item.at("incremental_cost").get<std::string>());
      rec.valuations = serial::amounts_from_json(item.at("valuations"));
      if (!item.at("payments").is_null()) {
        rec.payments = serial::amounts_from_json(item.at("payments"));
      }
      rec.net_benefits = serial::amounts_from_json(item.at("net_benefits"));
      rec.solver_status = item.value("solver_status", std::string("none"));
      r.rounds.push_back(std::move(rec));
    }
    const auto& prov = doc.at("provenance");
    r.seed = prov.at("seed").get<std::uint64_t>();
    r.config_hash = prov.at("config_hash").get<std::string>();
    r.generator = prov.value("generator", json(nullptr));
    aggregate(r);
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed session result: ") + e.what(), 0);
  }
}

std::string SessionResult::rounds_csv() const {
  using money::exact;
  std::ostringstream out;
  out << "round,T0,outcome,setpoint,welfare,sum_valuations,incremental_cost,cost,budget_residual\n";
  for (const auto& r : rounds) {
    out << r.round << ',' << r.T0 << ',' << to_string(r.outcome.kind) << ','
        << r.outcome.setpoint << ',' << exact(r.welfare.welfare) << ','
        << exact(r.welfare.sum_valuations) << ',' << exact(r.incremental_cost) << ','
        << exact(r.cost) << ',' << exact(r.budget_residual()) << '\n';
  }
  return out.str();
}

std::string SessionResult::occupants_csv() const {
  std::ostringstream out;
  out << "occupant,mean_pi,var_pi\n";
  for (std::size_t i = 0; i < occupants.size(); ++i) {
    out << occupants[i] << ',' << money::exact(mean_pi.at(i)) << ','
        << money::exact(var_pi.at(i)) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- audits

bool IcAudit::passed(double tol, double z) const {
  if (exhaustive) return max_violation <= tol;
  for (const auto& d : deviations) {
    if (d.gain() > z * d.std_error + tol) return false;
  }
  return true;
}

json IcAudit::to_json() const {
  json worst = nullptr;
  const IcDeviation* w = nullptr;
  for (const auto& d : deviations) {
    if (!w || d.gain() > w->gain()) w = &d;
  }
  if (w) {
    worst = {{"occupant", w->occupant},
             {"true_type", w->true_type},
             {"reported_type", w->reported_type},
             {"truthful", w->truthful},
             {"deviating", w->deviating},
             {"std_error", w->std_error}};
  }
  return {{"depth", exhaustive ? "exhaustive" : "sampled"},
          {"samples", samples},
          {"checked", deviations.size()},
          {"max_violation", max_violation},
          {"max_z", max_z},
          {"worst", worst},
          {"passed", passed()}};
}

namespace {

// Expected sum_j beta_ij psi_j(theta_j) over the opponents' priors; the
// same for every report of occupant i.
double redistribution_term(std::size_t i, const JointPrior& priors, const MechanismParams& params,
                           const ExternalityTable& ext) {
  double total = 0.0;
  for (std::size_t j = 0; j < priors.size(); ++j) {
    if (j == i) continue;
    double e = 0.0;
    for (int t = 0; t < kTypeCount; ++t) e += priors[j][t] * ext.psi(j, t, params.alpha());
    total += params.beta()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * e;
  }
  return total;
}

}  // namespace

IcAudit ic_audit(const JointPrior& priors, const MechanismParams& params, const CostVector& costs,
                 const ValuationTable& table, AuditDepth depth) {
  const std::size_t n = priors.size();
  if (params.size() != n) throw ConstraintViolation("params and priors differ in size");
  if (depth.exhaustive && n > kMaxExhaustiveOccupants) {
    throw StateSpaceOverflow("exhaustive audit limited to six occupants");
  }
  const OutcomeSelector selector(costs, table);
  const ExternalityTable ext = externality_table(priors, costs, table, {depth.samples, depth.seed});
  const auto& alpha = params.alpha();

  IcAudit audit;
  audit.exhaustive = depth.exhaustive;
  audit.samples = depth.samples;
  audit.interim.resize(n);
  std::vector<int> idx(n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    const double a_i = alpha[static_cast<Eigen::Index>(i)];
    const double redistribution = redistribution_term(i, priors, params, ext);
    // own[theta][r]: sum over opponent draws of u_i(theta, x_r) - a_i dC(x_r)
    std::array<std::array<double, kTypeCount>, kTypeCount> own{};
    std::array<std::array<double, kTypeCount>, kTypeCount> sq{};  // of gains, sampled mode
    std::array<OutcomeKind, kTypeCount> x{};
    auto outcomes = [&] {
      for (int r = 0; r < kTypeCount; ++r) {
        idx[i] = r;
        x[r] = selector.choose_indices(idx.data(), n);
      }
    };
    auto own_value = [&](int theta, int r) {
      return selector.value(theta, x[r]) - a_i * selector.increment(x[r]);
    };

    double weight_total = 0.0;
    if (depth.exhaustive) {
      detail::for_each_profile(n - 1, [&](const int* others) {
        double w = 1.0;
        for (std::size_t j = 0, o = 0; j < n; ++j) {
          if (j == i) continue;
          idx[j] = others[o++];
          w *= priors[j][idx[j]];
        }
        if (w == 0.0) return;
        outcomes();
        for (int theta = 0; theta < kTypeCount; ++theta)
          for (int r = 0; r < kTypeCount; ++r) own[theta][r] += w * own_value(theta, r);
      });
      weight_total = 1.0;
    } else {
      if (depth.samples < 2) throw ConfigError("sampled audit needs at least two samples", "samples");
      Rng rng = make_rng(depth.seed, (std::uint64_t{1} << 33) + i);
      for (std::uint64_t s = 0; s < depth.samples; ++s) {
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) idx[j] = sample_index(priors[j], rng);
        }
        outcomes();
        // The opponents' cost-adjusted value at x_r is this draw's sample
        // of psi_i(r); estimating it on the same draws keeps the gain
        // estimate and its standard error consistent.
        std::array<double, kTypeCount> others{};
        for (int r = 0; r < kTypeCount; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            others[r] += selector.value(idx[j], x[r]) -
                         alpha[static_cast<Eigen::Index>(j)] * selector.increment(x[r]);
          }
        }
        for (int theta = 0; theta < kTypeCount; ++theta) {
          const double truthful = own_value(theta, theta) + others[theta];
          for (int r = 0; r < kTypeCount; ++r) {
            const double v = own_value(theta, r) + others[r];
            own[theta][r] += v;
            const double g = v - truthful;
            sq[theta][r] += g * g;
          }
        }
      }
      weight_total = static_cast<double>(depth.samples);
    }

    for (int theta = 0; theta < kTypeCount; ++theta) {
      for (int r = 0; r < kTypeCount; ++r) {
        const double psi = depth.exhaustive ? ext.psi(i, r, alpha) : 0.0;
        audit.interim[i][theta][r] = own[theta][r] / weight_total + psi - redistribution;
      }
    }
    for (int theta = 0; theta < kTypeCount; ++theta) {
      for (int r = 0; r < kTypeCount; ++r) {
        if (r == theta) continue;
        IcDeviation d{i, theta + 1, r + 1, audit.interim[i][theta][theta],
                      audit.interim[i][theta][r], 0.0};
        if (!depth.exhaustive) {
          // Sample variance of the per-draw gain.
          const double N = weight_total;
          const double mean_gain = (own[theta][r] - own[theta][theta]) / N;
          const double var = std::max(0.0, (sq[theta][r] - N * mean_gain * mean_gain) / (N - 1.0));
          d.std_error = std::sqrt(var / N);
          if (d.std_error > 0) audit.max_z = std::max(audit.max_z, d.gain() / d.std_error);
        }
        audit.max_violation = std::max(audit.max_violation, d.gain());
        audit.deviations.push_back(d);
      }
    }
  }
  return audit;
}

json BudgetAudit::to_json() const {
  return {{"profiles", profiles}, {"max_imbalance", max_imbalance}, {"passed", passed()}};
}

BudgetAudit budget_audit(const JointPrior& priors, const MechanismParams& params,
                         const CostVector& costs, const ValuationTable& table, AuditDepth depth) {
  const std::size_t n = priors.size();
  const OutcomeSelector selector(costs, table);
  const ExternalityTable ext = externality_table(priors, costs, table, {depth.samples, depth.seed});
  BudgetAudit audit;
  std::vector<ComfortType> types(n, ComfortType::from_index(0));
  auto check = [&](const int* idx) {
    for (std::size_t j = 0; j < n; ++j) types[j] = ComfortType::from_index(idx[j]);
    const OutcomeKind x = selector.choose_indices(idx, n);
    const auto t = transfers(types, x, costs, params, ext);
    audit.max_imbalance = std::max(audit.max_imbalance, std::abs(t.total() - costs.incremental(x)));
    ++audit.profiles;
  };
  if (depth.exhaustive) {
    if (n > kMaxExhaustiveOccupants) throw StateSpaceOverflow("exhaustive audit limited to six occupants");
    detail::for_each_profile(n, check);
  } else {
    Rng rng = make_rng(depth.seed, std::uint64_t{1} << 34);
    std::vector<int> idx(n);
    for (std::uint64_t s = 0; s < depth.samples; ++s) {
      for (std::size_t j = 0; j < n; ++j) idx[j] = sample_index(priors[j], rng);
      check(idx.data());
    }
  }
  return audit;
}

// ---------------------------------------------------------------- baselines

json SavingsReport::to_json() const {
  using money::exact;
  return {{"policy_cost", exact(policy_cost)},
          {"baseline_cost", exact(baseline_cost)},
          {"saving", saving},
          {"policy_comfort", exact(policy_comfort)},
          {"baseline_comfort", exact(baseline_comfort)}};
}

SavingsReport baseline_compare(const SessionResult& policy, const SessionResult& baseline) {
  if (policy.rounds.size() != baseline.rounds.size()) {
    throw ConfigError("policy and baseline runs differ in round count", "rounds");
  }
  SavingsReport r;
  r.policy_cost = policy.total_cost;
  r.baseline_cost = baseline.total_cost;
  r.saving = baseline.total_cost == 0.0 ? 0.0 : 1.0 - policy.total_cost / baseline.total_cost;
  r.policy_comfort = policy.mean_comfort;
  r.baseline_comfort = baseline.mean_comfort;
  return r;
}

bool PriceSweep::non_increasing(double tol) const {
  for (std::size_t k = 1; k < points.size(); ++k) {
    if (points[k].common_benefit > points[k - 1].common_benefit + tol) return false;
  }
  return true;
}

json PriceSweep::to_json() const {
  json pts = json::array();
  for (const auto& p : points) {
    pts.push_back({{"price", p.price},
                   {"status", to_string(p.status)},
                   {"common_benefit", p.common_benefit},
                   {"spread", p.spread},
                   {"benefits", p.benefits},
                   {"standard_benefits", p.standard_benefits},
                   {"standard_spread", p.standard_spread}});
  }
  return {{"kind", "price_sweep"}, {"points", std::move(pts)}};
}

PriceSweep PriceSweep::from_json(const json& doc) {
  try {
    PriceSweep s;
    for (const auto& p : doc.at("points")) {
      PricePoint pt;
      pt.price = p.at("price").get<double>();
      pt.common_benefit = p.at("common_benefit").get<double>();
      pt.spread = p.value("spread", 0.0);
      pt.benefits = p.value("benefits", std::vector<double>{});
      pt.standard_benefits = p.value("standard_benefits", std::vector<double>{});
      pt.standard_spread = p.value("standard_spread", 0.0);
      const auto st = p.value("status", std::string("Exact"));
      pt.status = st == "Infeasible"          ? SolverStatus::Infeasible
                  : st == "ProjectedGradient" ? SolverStatus::ProjectedGradient
                                              : SolverStatus::Exact;
      s.points.push_back(std::move(pt));
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed price sweep: ") + e.what(), 0);
  }
}

std::string PriceSweep::csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "price,common_benefit\n";
  for (const auto& p : points) out << p.price << ',' << p.common_benefit << '\n';
  return out.str();
}

PriceSweep price_sweep(const ScenarioSpec& spec, const std::vector<double>& prices) {
  if (!std::is_sorted(prices.begin(), prices.end())) {
    throw ConfigError("price grid must be ascending", "prices");
  }
  const auto& cfg = spec.session;
  const JointPrior joint = probe_priors(spec);
  const std::size_t n = cfg.occupancy.size();
  const CostVector reference = probe_costs(spec);
  PriceSweep sweep;
  for (double rho : prices) {
    if (rho < 0) throw ConfigError("prices must be nonnegative", "prices");
    CostVector costs = reference;
    if (spec.probe.increments || cfg.cost_table) {
      costs = reference.scaled(rho / cfg.energy.price_per_kwh);
    } else {
      SessionConfig c = cfg;
      c.energy.price_per_kwh = rho;
      costs = round_costs(c, 0, spec.probe.temperature);
    }
    const auto cache = build_moment_cache(joint, costs, cfg.valuations, cfg.moments,
                                          {cfg.psi_samples, spec.seed});
    const auto sol = optimize_fairness(cache);
    PricePoint pt;
    pt.price = rho;
    pt.status = sol.status;
    pt.benefits = sol.exante_benefits;
    pt.common_benefit = 0.0;
    for (double b : pt.benefits) pt.common_benefit += b / static_cast<double>(n);
    const auto [lo, hi] = std::minmax_element(pt.benefits.begin(), pt.benefits.end());
    pt.spread = *hi - *lo;
    pt.standard_benefits = exante_net_benefits(cache, MechanismParams::standard(n));
    const auto [slo, shi] =
        std::minmax_element(pt.standard_benefits.begin(), pt.standard_benefits.end());
    pt.standard_spread = *shi - *slo;
    sweep.points.push_back(std::move(pt));
  }
  return sweep;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[digest[k] >> 4];
    out += hex[digest[k] & 0xF];
  }
  return out;
}

}  // namespace acpolicy::sim
