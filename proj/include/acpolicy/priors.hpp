#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include <json.hpp>

#include "acpolicy/mechanism.hpp"

namespace acpolicy {

// Per-occupant, per-temperature type distributions.
class PriorSet {
 public:
  // Validates `p`; throws ConfigError.
  void set(const OccupantId& occupant, int temperature, const TypeDistribution& p);
  bool contains(const OccupantId& occupant, int temperature) const;
  // Throws PriorNotInitialized.
  const TypeDistribution& at(const OccupantId& occupant, int temperature) const;
  JointPrior joint(const std::vector<OccupantId>& occupants, int temperature) const;

  std::vector<OccupantId> occupants() const;
  bool empty() const noexcept { return priors_.empty(); }
  const std::map<OccupantId, std::map<int, TypeDistribution>>& entries() const noexcept {
    return priors_;
  }

  // {"alice": {"24": [p1, ..., p9], ...}, ...}
  static PriorSet from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
  static PriorSet load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const PriorSet&, const PriorSet&) = default;

 private:
  std::map<OccupantId, std::map<int, TypeDistribution>> priors_;
};

// Observation counts over the nine types. Real-valued so an initial prior
// can be loaded as fractional pseudo-observations.
using TypeCounts = std::array<double, kTypeCount>;

inline constexpr double kDefaultSmoothing = 1.0;

// (count_k + s) / (total + 9 s).
TypeDistribution smoothed(const TypeCounts& counts, double smoothing = kDefaultSmoothing);

// Records one observation of `observed` and returns the smoothed
// distribution. Throws ConfigError unless smoothing > 0.
TypeDistribution prior_update(TypeCounts& counts, ComfortType observed,
                              double smoothing = kDefaultSmoothing);

// Mode of `p`; ties go to the lowest type id.
ComfortType distribution_mode(const TypeDistribution& p);

// Half the L1 distance.
double total_variation(const TypeDistribution& p, const TypeDistribution& q);

}  // namespace acpolicy
