#include <algorithm>
#include <fstream>
#include <set>

#include "acpolicy/errors.hpp"
#include "acpolicy/money.hpp"
#include "acpolicy/session.hpp"

namespace acpolicy {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Phase phase) noexcept {
  return phase == Phase::PreferenceCollection ? "PreferenceCollection" : "FairAllocation";
}

std::string_view to_string(PaymentRule rule) noexcept {
  return rule == PaymentRule::Generalized ? "generalized" : "standard";
}

std::string_view to_string(ReportSource source) noexcept {
  return source == ReportSource::Manual ? "manual" : "defaulted";
}

std::string_view to_string(EntryReason reason) noexcept {
  return reason == EntryReason::MechanismPayment ? "MechanismPayment" : "Adjustment";
}

namespace {

template <typename T>
T field(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("wrong type for '") + key + "'", key);
  }
}

Phase phase_from(const std::string& s) {
  if (s == "PreferenceCollection") return Phase::PreferenceCollection;
  if (s == "FairAllocation") return Phase::FairAllocation;
  throw ConfigError("unknown phase '" + s + "'", "phase");
}

PaymentRule rule_from(const std::string& s) {
  if (s == "generalized") return PaymentRule::Generalized;
  if (s == "standard") return PaymentRule::Standard;
  throw ConfigError("unknown payment rule '" + s + "'", "payment_rule");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

EnergyModelConfig energy_from(const json& doc) {
  EnergyModelConfig e;
  if (!doc.is_object()) throw ConfigError("energy must be an object", "energy");
  e.ua_w_per_k = field(doc, "ua_w_per_k", e.ua_w_per_k);
  e.internal_gains_w = field(doc, "internal_gains_w", e.internal_gains_w);
  e.cop = field(doc, "cop", e.cop);
  e.price_per_kwh = field(doc, "price_per_kwh", e.price_per_kwh);
  e.interval_h = field(doc, "interval_h", e.interval_h);
  return e;
}

WeatherTrace weather_from(const json& doc, const fs::path& base) {
  if (doc.is_number()) return WeatherTrace::constant(doc.get<double>());
  if (!doc.is_object()) throw ConfigError("weather must be an object", "weather");
  if (doc.contains("csv")) return WeatherTrace::from_csv(resolve(base, doc.at("csv").get<std::string>()));
  if (doc.contains("constant_c")) return WeatherTrace::constant(field(doc, "constant_c", 30.0));
  if (doc.contains("samples")) {
    std::vector<WeatherSample> samples;
    for (const auto& s : doc.at("samples")) {
      samples.push_back({field(s, "timestamp", std::string{}), field(s, "outdoor_c", 30.0)});
    }
    if (samples.empty()) throw ConfigError("weather trace is empty", "weather");
    return WeatherTrace(std::move(samples));
  }
  throw ConfigError("weather needs csv, constant_c or samples", "weather");
}

CostTable cost_table_from(const json& doc, const fs::path& base, int lower, int upper) {
  if (doc.contains("csv")) {
    return load_cost_table(resolve(base, doc.at("csv").get<std::string>()), lower, upper);
  }
  std::vector<CostTable::RoundCosts> rounds;
  try {
    for (const auto& r : doc.at("rounds")) {
      CostTable::RoundCosts rc{r.at("round").get<long>(), {}};
      for (const auto& [key, amount] : r.at("costs").items()) {
        rc.by_setpoint[std::stoi(key)] =
            amount.is_string() ? money::parse(amount.get<std::string>()) : amount.get<double>();
      }
      for (int t = lower; t <= upper; ++t) {
        if (!rc.by_setpoint.count(t)) {
          throw IncompleteTable("cost table round " + std::to_string(rc.round) +
                                " has no cost for set-point " + std::to_string(t));
        }
      }
      rounds.push_back(std::move(rc));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed cost table: ") + e.what(), "cost_table");
  }
  return CostTable(std::move(rounds));
}

ValuationTable valuations_from(const json& doc, const fs::path& base) {
  if (doc.is_object() && doc.contains("csv")) {
    return ValuationTable::from_csv(resolve(base, doc.at("csv").get<std::string>()));
  }
  ValuationTable::Matrix m{};
  try {
    const auto rows = doc.get<std::vector<std::vector<double>>>();
    if (rows.size() != kTypeCount) throw ConfigError("valuations need nine rows", "valuations");
    for (int t = 0; t < kTypeCount; ++t) {
      if (rows[t].size() != kOutcomeCount) {
        throw ConfigError("valuation rows need three entries", "valuations");
      }
      for (int k = 0; k < kOutcomeCount; ++k) m[t][k] = rows[t][k];
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed valuations: ") + e.what(), "valuations");
  }
  return ValuationTable(m);
}

}  // namespace

void SessionConfig::validate() const {
  if (temp_lower >= temp_upper) {
    throw ConfigError("temp_lower must be below temp_upper", "temp_upper");
  }
  if (step != 1) throw ConfigError("step must be 1", "step");
  if (initial_temp < temp_lower || initial_temp > temp_upper) {
    throw ConfigError("initial_temp outside [temp_lower, temp_upper]", "initial_temp");
  }
  if (base_setpoint < temp_lower || base_setpoint > temp_upper) {
    throw ConfigError("base_setpoint outside [temp_lower, temp_upper]", "base_setpoint");
  }
  if (round_length_ms <= 0) throw ConfigError("round_length must be positive", "round_length_s");
  if (!(smoothing > 0)) throw ConfigError("smoothing must be positive", "smoothing");
  if (occupancy.empty()) throw ConfigError("occupancy is empty", "occupancy");
  std::set<OccupantId> seen;
  for (const auto& o : occupancy) {
    if (o.empty()) throw ConfigError("occupant ids must be non-empty", "occupancy");
    if (!seen.insert(o).second) throw ConfigError("duplicate occupant id '" + o + "'", "occupancy");
  }
  if (phase == Phase::PreferenceCollection) {
    if (sweep.empty()) throw ConfigError("phase-1 sweep is empty", "sweep");
    if (sweep.front() != initial_temp) {
      throw ConfigError("sweep must start at initial_temp", "sweep");
    }
    for (std::size_t k = 0; k < sweep.size(); ++k) {
      if (sweep[k] < temp_lower || sweep[k] > temp_upper) {
        throw ConfigError("sweep leaves the temperature range", "sweep");
      }
      if (k > 0 && std::abs(sweep[k] - sweep[k - 1]) > step) {
        throw ConfigError("sweep moves more than one step per round", "sweep");
      }
    }
  }
  EnergyModelConfig e = energy;
  e.base_setpoint = base_setpoint;
  e.validate(temp_lower, temp_upper);
  if (cost_table && cost_table->size() == 0) throw ConfigError("cost table is empty", "cost_table");
  for (const auto& occ : initial_priors.occupants()) {
    if (!seen.count(occ)) {
      throw ConfigError("initial prior for unknown occupant '" + occ + "'", "initial_priors");
    }
  }
  if (!(initial_prior_weight >= 0)) {
    throw ConfigError("initial_prior_weight must be nonnegative", "initial_prior_weight");
  }
  if (!(refresh_tv >= 0 && refresh_tv <= 1)) {
    throw ConfigError("refresh_tv must lie in [0, 1]", "fairness.refresh_tv");
  }
  if (moments.kind == MomentMode::Kind::MonteCarlo && moments.samples < 2) {
    throw ConfigError("Monte Carlo needs at least two samples", "fairness.samples");
  }
  if (moments.kind == MomentMode::Kind::Exhaustive && occupancy.size() > kMaxExhaustiveOccupants) {
    throw ConfigError("exhaustive expectations need at most six occupants", "fairness.mode");
  }
  if (psi_samples == 0) throw ConfigError("psi_samples must be positive", "fairness.psi_samples");
}

SessionConfig SessionConfig::from_json(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("session config must be a JSON object");
  SessionConfig c;
  c.temp_lower = field(doc, "temp_lower", c.temp_lower);
  c.temp_upper = field(doc, "temp_upper", c.temp_upper);
  c.step = field(doc, "step", c.step);
  if (doc.contains("round_length_ms")) {
    c.round_length_ms = field(doc, "round_length_ms", c.round_length_ms);
  } else {
    c.round_length_ms = static_cast<std::int64_t>(
        field(doc, "round_length_s", static_cast<double>(c.round_length_ms) / 1000.0) * 1000.0);
  }
  c.phase = phase_from(field(doc, "phase", std::string(to_string(c.phase))));
  c.base_setpoint = field(doc, "base_setpoint", c.base_setpoint);
  c.initial_temp = field(doc, "initial_temp", c.initial_temp);
  c.smoothing = field(doc, "smoothing", c.smoothing);
  c.occupancy = field(doc, "occupancy", c.occupancy);
  c.sweep = field(doc, "sweep", c.sweep);
  c.payment_rule = rule_from(field(doc, "payment_rule", std::string(to_string(c.payment_rule))));
  if (doc.contains("energy")) c.energy = energy_from(doc.at("energy"));
  c.energy.base_setpoint = c.base_setpoint;
  if (doc.contains("weather")) c.weather = weather_from(doc.at("weather"), base_dir);
  if (doc.contains("cost_table") && !doc.at("cost_table").is_null()) {
    c.cost_table = cost_table_from(doc.at("cost_table"), base_dir, c.temp_lower, c.temp_upper);
  }
  if (doc.contains("valuations")) c.valuations = valuations_from(doc.at("valuations"), base_dir);
  if (doc.contains("initial_priors")) {
    const auto& p = doc.at("initial_priors");
    c.initial_priors = p.is_string() ? PriorSet::load(resolve(base_dir, p.get<std::string>()))
                                     : PriorSet::from_json(p);
  }
  c.initial_prior_weight = field(doc, "initial_prior_weight", c.initial_prior_weight);
  c.seed = field(doc, "seed", c.seed);

  const bool large = c.occupancy.size() > kMaxExhaustiveOccupants;
  const json f = doc.value("fairness", json::object());
  const std::string mode = field(f, "mode", std::string(large ? "monte-carlo" : "exhaustive"));
  if (mode == "monte-carlo") {
    c.moments = MomentMode::monte_carlo(field(f, "samples", kDefaultMonteCarloSamples),
                                        field(f, "seed", c.seed));
  } else if (mode != "exhaustive") {
    throw ConfigError("unknown fairness mode '" + mode + "'", "fairness.mode");
  }
  c.psi_samples = field(f, "psi_samples", c.psi_samples);
  c.refresh_tv = field(f, "refresh_tv", c.refresh_tv);
  c.validate();
  return c;
}

SessionConfig SessionConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string(), "config");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what(), "config");
  }
  return from_json(doc.contains("session") ? doc.at("session") : doc, path.parent_path());
}

json SessionConfig::to_json() const {
  json weather_samples = json::array();
  for (const auto& s : weather.samples()) {
    weather_samples.push_back({{"timestamp", s.timestamp}, {"outdoor_c", s.outdoor_c}});
  }
  json values = json::array();
  for (const auto& row : valuations.values()) values.push_back(row);
  json fairness = {{"mode", moments.kind == MomentMode::Kind::Exhaustive ? "exhaustive"
                                                                          : "monte-carlo"},
                   {"psi_samples", psi_samples},
                   {"refresh_tv", refresh_tv}};
  if (moments.kind == MomentMode::Kind::MonteCarlo) {
    fairness["samples"] = moments.samples;
    fairness["seed"] = moments.seed;
  }
  json doc = {{"temp_lower", temp_lower},
              {"temp_upper", temp_upper},
              {"step", step},
              {"round_length_ms", round_length_ms},
              {"phase", to_string(phase)},
              {"base_setpoint", base_setpoint},
              {"initial_temp", initial_temp},
              {"smoothing", smoothing},
              {"occupancy", occupancy},
              {"sweep", sweep},
              {"payment_rule", to_string(payment_rule)},
              {"energy",
               {{"ua_w_per_k", energy.ua_w_per_k},
                {"internal_gains_w", energy.internal_gains_w},
                {"cop", energy.cop},
                {"price_per_kwh", energy.price_per_kwh},
                {"interval_h", energy.interval_h}}},
              {"weather", {{"samples", std::move(weather_samples)}}},
              {"valuations", std::move(values)},
              {"initial_priors", initial_priors.to_json()},
              {"initial_prior_weight", initial_prior_weight},
              {"fairness", std::move(fairness)},
              {"seed", seed}};
  if (cost_table) {
    json rounds = json::array();
    for (const auto& r : cost_table->rounds()) {
      json costs = json::object();
      for (const auto& [t, amount] : r.by_setpoint) costs[std::to_string(t)] = money::exact(amount);
      rounds.push_back({{"round", r.round}, {"costs", std::move(costs)}});
    }
    doc["cost_table"] = {{"rounds", std::move(rounds)}};
  }
  return doc;
}

}  // namespace acpolicy
