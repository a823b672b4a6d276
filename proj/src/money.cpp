#include "acpolicy/money.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "acpolicy/errors.hpp"

namespace acpolicy::money {

std::string exact(double amount) {
  if (amount == 0.0) amount = 0.0;  // drop the sign of negative zero
  std::array<char, 512> buf{};
  const auto [ptr, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), amount, std::chars_format::fixed);
  if (ec != std::errc{}) throw Error("cannot format amount");
  return std::string(buf.data(), ptr);
}

std::string rounded(double amount, int places) {
  const double scale = std::pow(10.0, places);
  double r = std::round(amount * scale) / scale;
  if (r == 0.0) r = 0.0;
  std::array<char, 128> buf{};
  std::snprintf(buf.data(), buf.size(), "%.*f", places, r);
  return std::string(buf.data());
}

double parse(std::string_view text) {
  for (char c : text) {
    if (c == 'e' || c == 'E') throw ParseError("amount must be fixed-point: " + std::string(text), 0);
  }
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value, std::chars_format::fixed);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ParseError("malformed amount '" + std::string(text) + "'", 0);
  }
  return value;
}

}  // namespace acpolicy::money
