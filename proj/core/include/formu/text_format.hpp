#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace formu {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_number(double value);

/// Fixed-point with `digits` decimals.
std::string format_fixed(double value, int digits);

/// Shortest round-trip text padded with zeros to at least `min_decimals` decimals.
std::string format_min_decimals(double value, int min_decimals);

/// Parses a full double; throws ValidationError on trailing junk.
double parse_number(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

} // namespace formu
