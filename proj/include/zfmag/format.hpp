#pragma once

#include <charconv>
#include <cmath>
#include <initializer_list>
#include <span>
#include <string>
#include <system_error>

namespace zfmag {

/// Shortest round-trip decimal form; "nan" for masked values.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string join_numbers(std::span<const double> values, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += sep;
    out += format_number(values[i]);
  }
  return out;
}

inline std::string join_numbers(std::initializer_list<double> values, char sep = ',') {
  return join_numbers(std::span<const double>(values.begin(), values.size()), sep);
}

}  // namespace zfmag
