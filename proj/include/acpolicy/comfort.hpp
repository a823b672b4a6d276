#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>

namespace acpolicy {

inline constexpr int kTypeCount = 9;
inline constexpr int kOutcomeCount = 3;

enum class ComfortGroup { Cooler, Current, Warmer };

// Candidate set-point changes relative to the current room temperature.
// The numeric values double as column indices into a ValuationTable.
enum class OutcomeKind { Cooler = 0, Stay = 1, Warmer = 2 };

inline constexpr std::array<OutcomeKind, kOutcomeCount> kAllOutcomes = {
    OutcomeKind::Cooler, OutcomeKind::Stay, OutcomeKind::Warmer};

constexpr int index_of(OutcomeKind kind) noexcept { return static_cast<int>(kind); }
constexpr int setpoint_delta(OutcomeKind kind) noexcept { return index_of(kind) - 1; }

std::string_view to_string(OutcomeKind kind) noexcept;
OutcomeKind outcome_kind_from_string(std::string_view name);
std::string_view to_string(ComfortGroup group) noexcept;

// One of the nine discrete thermal-comfort reports. Ids 1-3 prefer cooler,
// 4-6 prefer the current temperature, 7-9 prefer warmer.
class ComfortType {
 public:
  // Throws std::out_of_range for ids outside 1..9.
  static ComfortType from_id(int id);
  static constexpr ComfortType from_index(int index) { return ComfortType(index); }
  static std::array<ComfortType, kTypeCount> all() noexcept;

  constexpr int id() const noexcept { return index_ + 1; }
  constexpr int index() const noexcept { return index_; }
  constexpr ComfortGroup group() const noexcept {
    return static_cast<ComfortGroup>(index_ / 3);
  }
  std::string_view label() const noexcept;

  friend constexpr bool operator==(ComfortType, ComfortType) = default;
  friend constexpr auto operator<=>(ComfortType, ComfortType) = default;

 private:
  constexpr explicit ComfortType(int index) : index_(index) {}
  int index_;
};

struct Outcome {
  OutcomeKind kind;
  int setpoint;  // degrees C

  static constexpr Outcome at(OutcomeKind kind, int current_temp) noexcept {
    return Outcome{kind, current_temp + setpoint_delta(kind)};
  }
  friend constexpr bool operator==(const Outcome&, const Outcome&) = default;
};

// Willingness to pay, in dollars, of every comfort type for every outcome.
class ValuationTable {
 public:
  using Row = std::array<double, kOutcomeCount>;
  using Matrix = std::array<Row, kTypeCount>;

  // Default nine-type table.
  static ValuationTable standard();

  // Validates range and row-maximum placement; throws ConfigError.
  explicit ValuationTable(const Matrix& values);

  // CSV with header `type_id,cooler,stay,warmer`, one row per type.
  static ValuationTable from_csv(const std::filesystem::path& path);

  double value(ComfortType type, OutcomeKind kind) const noexcept {
    return values_[type.index()][index_of(kind)];
  }
  const Matrix& values() const noexcept { return values_; }

  friend bool operator==(const ValuationTable&, const ValuationTable&) = default;

 private:
  Matrix values_;
};

inline double valuation(const ValuationTable& table, ComfortType type,
                        const Outcome& outcome) noexcept {
  return table.value(type, outcome.kind);
}

}  // namespace acpolicy
