#include "acpolicy/priors.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "acpolicy/errors.hpp"

namespace acpolicy {

void PriorSet::set(const OccupantId& occupant, int temperature, const TypeDistribution& p) {
  validate_distribution(p, occupant + " at " + std::to_string(temperature) + " C");
  priors_[occupant][temperature] = p;
}

bool PriorSet::contains(const OccupantId& occupant, int temperature) const {
  auto it = priors_.find(occupant);
  return it != priors_.end() && it->second.contains(temperature);
}

const TypeDistribution& PriorSet::at(const OccupantId& occupant, int temperature) const {
  auto it = priors_.find(occupant);
  if (it == priors_.end()) {
    throw PriorNotInitialized("no prior for occupant '" + occupant + "'");
  }
  auto jt = it->second.find(temperature);
  if (jt == it->second.end()) {
    throw PriorNotInitialized("no prior for occupant '" + occupant + "' at " +
                              std::to_string(temperature) + " C");
  }
  return jt->second;
}

JointPrior PriorSet::joint(const std::vector<OccupantId>& occupants, int temperature) const {
  JointPrior out;
  out.reserve(occupants.size());
  for (const auto& o : occupants) out.push_back(at(o, temperature));
  return out;
}

std::vector<OccupantId> PriorSet::occupants() const {
  std::vector<OccupantId> out;
  for (const auto& [id, _] : priors_) out.push_back(id);
  return out;
}

PriorSet PriorSet::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("prior set must be a JSON object", "priors");
  PriorSet out;
  for (const auto& [occupant, by_temp] : doc.items()) {
    if (!by_temp.is_object()) {
      throw ConfigError("priors for '" + occupant + "' must map temperatures to vectors",
                        "priors");
    }
    for (const auto& [key, vec] : by_temp.items()) {
      int temperature = 0;
      try {
        std::size_t used = 0;
        temperature = std::stoi(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw ConfigError("temperature key '" + key + "' is not an integer", "priors");
      }
      if (!vec.is_array() || vec.size() != kTypeCount) {
        throw ConfigError("prior for '" + occupant + "' at " + key + " needs 9 entries",
                          "priors");
      }
      TypeDistribution p;
      for (int k = 0; k < kTypeCount; ++k) {
        if (!vec[k].is_number()) {
          throw ConfigError("prior for '" + occupant + "' has a non-numeric entry", "priors");
        }
        p[k] = vec[k].get<double>();
      }
      out.set(occupant, temperature, p);
    }
  }
  return out;
}

nlohmann::json PriorSet::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [occupant, by_temp] : priors_) {
    auto& entry = doc[occupant] = nlohmann::json::object();
    for (const auto& [temperature, p] : by_temp) {
      entry[std::to_string(temperature)] = p;
    }
  }
  return doc;
}

PriorSet PriorSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string(), "priors");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what(), "priors");
  }
}

void PriorSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string(), "priors");
  out << to_json().dump(2) << "\n";
}

TypeDistribution smoothed(const TypeCounts& counts, double smoothing) {
  if (!(smoothing > 0)) throw ConfigError("smoothing must be positive", "smoothing");
  double total = 0.0;
  for (double c : counts) total += c;
  const double denom = total + kTypeCount * smoothing;
  TypeDistribution p;
  for (int k = 0; k < kTypeCount; ++k) p[k] = (counts[k] + smoothing) / denom;
  return p;
}

TypeDistribution prior_update(TypeCounts& counts, ComfortType observed, double smoothing) {
  if (!(smoothing > 0)) throw ConfigError("smoothing must be positive", "smoothing");
  counts[observed.index()] += 1.0;
  return smoothed(counts, smoothing);
}

ComfortType distribution_mode(const TypeDistribution& p) {
  int best = 0;
  for (int k = 1; k < kTypeCount; ++k) {
    if (p[k] > p[best]) best = k;
  }
  return ComfortType::from_index(best);
}

double total_variation(const TypeDistribution& p, const TypeDistribution& q) {
  double d = 0.0;
  for (int k = 0; k < kTypeCount; ++k) d += std::abs(p[k] - q[k]);
  return d / 2;
}

}  // namespace acpolicy
