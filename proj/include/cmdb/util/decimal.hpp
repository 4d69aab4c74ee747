#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <string>
#include <system_error>

namespace cmdb::decimal {

/// Shortest decimal representation that round-trips to `v`.
inline std::string shortest(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

/// Returns the double nearest to `v * 10^exponent`, computed by shifting the
/// decimal exponent of v's shortest representation. This keeps the printed
/// digits intact: scale(2.33, -3) == 2.33e-3 exactly, which plain
/// multiplication by 1e-3 does not guarantee.
inline double scale_pow10(double v, int exponent) {
  if (exponent == 0 || v == 0.0 || !std::isfinite(v)) return v;
  const std::string text = shortest(v);
  // to_chars may already produce an exponent ("1e+20"); fold it in.
  int existing = 0;
  std::string mantissa = text;
  if (const auto pos = text.find_first_of("eE"); pos != std::string::npos) {
    mantissa = text.substr(0, pos);
    existing = std::atoi(text.c_str() + pos + 1);
  }
  const std::string shifted = mantissa + "e" + std::to_string(existing + exponent);
  double out = 0.0;
  const auto res = std::from_chars(shifted.data(), shifted.data() + shifted.size(), out);
  if (res.ec == std::errc::result_out_of_range) {
    return std::strtod(shifted.c_str(), nullptr);
  }
  return out;
}

}  // namespace cmdb::decimal
