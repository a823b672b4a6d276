#pragma once

// Minimal reader for the flat numeric CSV files the engine ingests
// (valuation tables, weather traces, cost tables). No quoting support:
// none of those formats carries free text.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "acpolicy/errors.hpp"

namespace acpolicy::csv {

struct Row {
  std::size_t line;
  std::vector<std::string> fields;
};

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Reads the file, checks the header matches `expected_header` exactly
// (after trimming) and returns the data rows. Blank lines are skipped.
inline std::vector<Row> read(const std::filesystem::path& path,
                             std::string_view expected_header) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string(), path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<Row> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!header_seen) {
      if (trim(line) != expected_header) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": expected header '" + std::string(expected_header) + "'",
                         line_no);
      }
      header_seen = true;
      continue;
    }
    rows.push_back(Row{line_no, split(line)});
  }
  if (!header_seen) {
    throw ParseError(path.string() + ": empty file, expected header '" +
                         std::string(expected_header) + "'",
                     line_no);
  }
  return rows;
}

inline double to_double(const std::string& field, const std::filesystem::path& path,
                        std::size_t line) {
  double value = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc{} || ptr != end) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": malformed number '" +
                         field + "'",
                     line);
  }
  return value;
}

inline long to_integer(const std::string& field, const std::filesystem::path& path,
                       std::size_t line) {
  long value = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc{} || ptr != end) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": malformed integer '" +
                         field + "'",
                     line);
  }
  return value;
}

inline void expect_columns(const Row& row, std::size_t count,
                           const std::filesystem::path& path) {
  if (row.fields.size() != count) {
    throw ParseError(path.string() + ":" + std::to_string(row.line) + ": expected " +
                         std::to_string(count) + " columns, found " +
                         std::to_string(row.fields.size()),
                     row.line);
  }
}

}  // namespace acpolicy::csv
