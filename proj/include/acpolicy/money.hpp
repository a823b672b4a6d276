#pragma once

#include <string>
#include <string_view>

namespace acpolicy::money {

// Shortest fixed-point decimal string that parses back to the identical
// double. Used for every currency field written to event logs and result
// files so replays see bit-identical amounts.
std::string exact(double amount);

// Fixed-point string rounded to `places` decimals (default $0.0001).
std::string rounded(double amount, int places = 4);

// Parses a fixed-point decimal string; throws ParseError (line 0) on
// anything that is not a plain decimal number.
double parse(std::string_view text);

}  // namespace acpolicy::money
