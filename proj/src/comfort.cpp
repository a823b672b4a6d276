#include "acpolicy/comfort.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "acpolicy/errors.hpp"
#include "csv_util.hpp"

namespace acpolicy {

namespace {

constexpr std::array<std::string_view, kTypeCount> kLabels = {
    "Prefer cooler (1)",  "Prefer cooler (2)",  "Prefer cooler (3)",
    "Prefer current (1)", "Prefer current (2)", "Prefer current (3)",
    "Prefer warmer (1)",  "Prefer warmer (2)",  "Prefer warmer (3)",
};

constexpr double kValuationBound = 0.4;

}  // namespace

std::string_view to_string(OutcomeKind kind) noexcept {
  switch (kind) {
    case OutcomeKind::Cooler: return "Cooler";
    case OutcomeKind::Stay: return "Stay";
    case OutcomeKind::Warmer: return "Warmer";
  }
  return "?";
}

OutcomeKind outcome_kind_from_string(std::string_view name) {
  for (auto kind : kAllOutcomes) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown outcome '" + std::string(name) + "'");
}

std::string_view to_string(ComfortGroup group) noexcept {
  switch (group) {
    case ComfortGroup::Cooler: return "Cooler";
    case ComfortGroup::Current: return "Current";
    case ComfortGroup::Warmer: return "Warmer";
  }
  return "?";
}

ComfortType ComfortType::from_id(int id) {
  if (id < 1 || id > kTypeCount) {
    throw std::out_of_range("comfort type id must be in 1..9, got " + std::to_string(id));
  }
  return ComfortType(id - 1);
}

std::array<ComfortType, kTypeCount> ComfortType::all() noexcept {
  return {ComfortType(0), ComfortType(1), ComfortType(2), ComfortType(3), ComfortType(4),
          ComfortType(5), ComfortType(6), ComfortType(7), ComfortType(8)};
}

std::string_view ComfortType::label() const noexcept { return kLabels[index_]; }

ValuationTable ValuationTable::standard() {
  return ValuationTable(Matrix{{
      {0.2, 0.0, -0.2},
      {0.4, 0.0, -0.2},
      {0.4, -0.2, -0.4},
      {0.0, 0.4, 0.0},
      {0.0, 0.2, -0.2},
      {-0.2, 0.2, 0.0},
      {-0.2, 0.0, 0.2},
      {-0.2, 0.0, 0.4},
      {-0.4, -0.2, 0.4},
  }});
}

ValuationTable::ValuationTable(const Matrix& values) : values_(values) {
  for (int t = 0; t < kTypeCount; ++t) {
    const auto& row = values_[t];
    for (double v : row) {
      if (!std::isfinite(v) || std::abs(v) > kValuationBound + 1e-12) {
        throw ConfigError("valuation for type " + std::to_string(t + 1) +
                              " outside [-0.4, 0.4]",
                          "valuations");
      }
    }
    const int group_column = t / 3;
    const double row_max = *std::max_element(row.begin(), row.end());
    if (row[group_column] < row_max) {
      throw ConfigError("type " + std::to_string(t + 1) +
                            " does not value its own group's outcome highest",
                        "valuations");
    }
  }
}

ValuationTable ValuationTable::from_csv(const std::filesystem::path& path) {
  const auto rows = csv::read(path, "type_id,cooler,stay,warmer");
  Matrix values{};
  std::array<bool, kTypeCount> seen{};
  for (const auto& row : rows) {
    csv::expect_columns(row, 4, path);
    const long id = csv::to_integer(row.fields[0], path, row.line);
    if (id < 1 || id > kTypeCount) {
      throw ParseError(path.string() + ":" + std::to_string(row.line) +
                           ": type_id must be in 1..9",
                       row.line);
    }
    if (seen[id - 1]) {
      throw ParseError(path.string() + ":" + std::to_string(row.line) +
                           ": duplicate type_id " + std::to_string(id),
                       row.line);
    }
    seen[id - 1] = true;
    for (int k = 0; k < kOutcomeCount; ++k) {
      values[id - 1][k] = csv::to_double(row.fields[k + 1], path, row.line);
    }
  }
  for (int t = 0; t < kTypeCount; ++t) {
    if (!seen[t]) {
      throw ConfigError(path.string() + ": missing row for type_id " + std::to_string(t + 1),
                        "valuations");
    }
  }
  return ValuationTable(values);
}

}  // namespace acpolicy
