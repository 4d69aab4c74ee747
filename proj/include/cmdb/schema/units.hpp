#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "cmdb/util/decimal.hpp"
#include "cmdb/util/text.hpp"
#include "cmdb/util/utf8.hpp"

namespace cmdb::units {

// Exponents over kg, m, s, K. Every supported unit has a power-of-ten
// conversion factor, so conversions are done by decimal exponent shifts.
struct Dimension {
  std::array<int, 4> e{};
  friend bool operator==(const Dimension&, const Dimension&) = default;
  Dimension& operator+=(const Dimension& o) {
    for (int i = 0; i < 4; ++i) e[i] += o.e[i];
    return *this;
  }
  Dimension scaled(int k) const {
    Dimension d = *this;
    for (auto& x : d.e) x *= k;
    return d;
  }
};

struct ParsedUnit {
  Dimension dim;
  int pow10 = 0;  // SI value = raw value * 10^pow10
};

struct UnitConversion {
  double value_si = 0.0;
  std::string unit_si;
  bool supported = true;  // false: value passed through, needs review
  int pow10 = 0;
};

namespace detail {

inline constexpr Dimension kDimless{{0, 0, 0, 0}};
inline constexpr Dimension kPa{{1, -1, -2, 0}};
inline constexpr Dimension kN{{1, 1, -2, 0}};

struct Base {
  Dimension dim;
  int pow10;  // factor of the unprefixed unit
  bool prefixable;
};

inline const std::map<std::string, Base>& bases() {
  static const std::map<std::string, Base> b = {
      {"Pa", {kPa, 0, true}},
      {"N", {kN, 0, true}},
      {"m", {{{0, 1, 0, 0}}, 0, true}},
      {"s", {{{0, 0, 1, 0}}, 0, true}},
      {"g", {{{1, 0, 0, 0}}, -3, true}},
      {"K", {{{0, 0, 0, 1}}, 0, false}},
      {"%", {kDimless, -2, false}},
  };
  return b;
}

inline const std::map<std::string, int>& prefixes() {
  static const std::map<std::string, int> p = {
      {"Y", 24}, {"Z", 21}, {"E", 18}, {"P", 15}, {"T", 12}, {"G", 9}, {"M", 6},
      {"k", 3},  {"h", 2},  {"da", 1}, {"d", -1}, {"c", -2}, {"m", -3}, {"u", -6},
      {"\xC2\xB5", -6}, {"\xCE\xBC", -6}, {"n", -9}, {"p", -12}, {"f", -15}, {"a", -18}};
  return p;
}

inline std::optional<ParsedUnit> atom(const std::string& s) {
  if (auto it = bases().find(s); it != bases().end()) return ParsedUnit{it->second.dim, it->second.pow10};
  for (const auto& [pre, exp] : prefixes()) {
    if (s.size() <= pre.size() || s.compare(0, pre.size(), pre) != 0) continue;
    auto it = bases().find(s.substr(pre.size()));
    if (it != bases().end() && it->second.prefixable) {
      return ParsedUnit{it->second.dim, it->second.pow10 + exp};
    }
  }
  return std::nullopt;
}

class Parser {
public:
  explicit Parser(std::u32string s) : s_(std::move(s)) {}

  std::optional<ParsedUnit> run() {
    skip_ws();
    if (at_end()) return ParsedUnit{};
    auto r = expr();
    skip_ws();
    if (!r || !at_end()) return std::nullopt;
    return r;
  }

private:
  bool at_end() const { return i_ >= s_.size(); }
  void skip_ws() {
    while (!at_end() && s_[i_] == U' ') ++i_;
  }
  static bool is_product(char32_t c) {
    return c == U'·' || c == U'⋅' || c == U'*' || c == U'.' || c == U'×' ||
           c == U'•';
  }

  std::optional<ParsedUnit> expr() {
    auto acc = term();
    if (!acc) return std::nullopt;
    for (;;) {
      const std::size_t save = i_;
      skip_ws();
      if (at_end() || s_[i_] == U')') {
        i_ = save;
        return acc;
      }
      bool divide = false;
      if (s_[i_] == U'/') {
        divide = true;
        ++i_;
      } else if (is_product(s_[i_])) {
        ++i_;
      } else if (i_ == save) {
        return std::nullopt;  // two terms glued without a separator
      }
      skip_ws();
      auto rhs = term();
      if (!rhs) return std::nullopt;
      const int sign = divide ? -1 : 1;
      acc->dim += rhs->dim.scaled(sign);
      acc->pow10 += sign * rhs->pow10;
    }
  }

  std::optional<int> exponent() {
    if (at_end()) return 1;
    static const std::u32string sup_digits = U"⁰¹²³⁴⁵⁶⁷⁸⁹";
    if (s_[i_] == U'^') {
      ++i_;
      bool braced = false;
      if (!at_end() && s_[i_] == U'{') {
        braced = true;
        ++i_;
      }
      int sign = 1;
      if (!at_end() && (s_[i_] == U'-' || s_[i_] == U'−')) {
        sign = -1;
        ++i_;
      } else if (!at_end() && s_[i_] == U'+') {
        ++i_;
      }
      int v = 0;
      const std::size_t start = i_;
      while (!at_end() && s_[i_] >= U'0' && s_[i_] <= U'9') v = v * 10 + static_cast<int>(s_[i_++] - U'0');
      if (i_ == start) return std::nullopt;
      if (braced) {
        if (at_end() || s_[i_] != U'}') return std::nullopt;
        ++i_;
      }
      return sign * v;
    }
    int sign = 1;
    std::size_t j = i_;
    if (j < s_.size() && (s_[j] == U'⁻' || s_[j] == U'-')) {
      sign = -1;
      ++j;
    }
    int v = 0;
    const std::size_t start = j;
    while (j < s_.size()) {
      const auto pos = sup_digits.find(s_[j]);
      if (pos != std::u32string::npos) {
        v = v * 10 + static_cast<int>(pos);
      } else if (s_[j] >= U'0' && s_[j] <= U'9') {
        v = v * 10 + static_cast<int>(s_[j] - U'0');
      } else {
        break;
      }
      ++j;
    }
    if (j == start) return 1;
    i_ = j;
    return sign * v;
  }

  std::optional<ParsedUnit> term() {
    if (at_end()) return std::nullopt;
    ParsedUnit u;
    if (s_[i_] == U'(') {
      ++i_;
      skip_ws();
      auto inner = expr();
      skip_ws();
      if (!inner || at_end() || s_[i_] != U')') return std::nullopt;
      ++i_;
      u = *inner;
    } else if (s_[i_] == U'1' && (i_ + 1 >= s_.size() || s_[i_ + 1] == U'/' || s_[i_ + 1] == U' ')) {
      ++i_;
      return ParsedUnit{};
    } else {
      std::u32string word;
      while (!at_end() && ((s_[i_] >= U'a' && s_[i_] <= U'z') || (s_[i_] >= U'A' && s_[i_] <= U'Z') ||
                           s_[i_] == U'%' || s_[i_] == U'µ' || s_[i_] == U'μ')) {
        word.push_back(s_[i_++]);
      }
      if (word.empty()) return std::nullopt;
      const std::string w = utf8::encode(word);
      if (w == "dimensionless" || w == "unitless") return ParsedUnit{};
      auto a = atom(w);
      if (!a) return std::nullopt;
      u = *a;
    }
    auto e = exponent();
    if (!e) return std::nullopt;
    u.dim = u.dim.scaled(*e);
    u.pow10 *= *e;
    return u;
  }

  std::u32string s_;
  std::size_t i_ = 0;
};

inline std::string format_dimension(const Dimension& d) {
  static const std::map<std::array<int, 4>, std::string> named = {
      {{0, 0, 0, 0}, "dimensionless"},
      {{1, -1, -2, 0}, "Pa"},
      {{1, -1, -1, 0}, "Pa·s"},
      {{-1, 1, 2, 0}, "1/Pa"},
      {{1, 1, -2, 0}, "N"},
      {{1, 0, -2, 0}, "N/m"},
      {{0, 1, 0, 0}, "m"},
      {{0, 2, 0, 0}, "m^2"},
      {{0, 3, 0, 0}, "m^3"},
      {{0, 0, 1, 0}, "s"},
      {{0, 0, -1, 0}, "1/s"},
      {{0, 1, -1, 0}, "m/s"},
      {{0, 1, -2, 0}, "m/s^2"},
      {{1, 0, 0, 0}, "kg"},
      {{1, -3, 0, 0}, "kg/m^3"},
      {{0, 0, 0, 1}, "K"},
      {{0, 0, 0, -1}, "1/K"},
      {{1, 2, -2, 0}, "N·m"},
  };
  if (auto it = named.find(d.e); it != named.end()) return it->second;
  static const char* names[4] = {"kg", "m", "s", "K"};
  std::string out;
  for (int i = 0; i < 4; ++i) {
    if (d.e[i] == 0) continue;
    if (!out.empty()) out += "·";
    out += names[i];
    if (d.e[i] != 1) out += "^" + std::to_string(d.e[i]);
  }
  return out;
}

}  // namespace detail

/// Parses a unit string of the supported grammar; nullopt when outside it.
inline std::optional<ParsedUnit> parse_unit(std::string_view unit_raw) {
  std::string t = text::trim(unit_raw);
  if (t == "-" || t == "–" || t == "—") t.clear();
  return detail::Parser(utf8::decode(t)).run();
}

/// SI spelling of a supported unit ("MPa" -> "Pa"); the raw string otherwise.
inline std::string si_unit_name(std::string_view unit_raw) {
  auto p = parse_unit(unit_raw);
  return p ? detail::format_dimension(p->dim) : text::trim(unit_raw);
}

/// Converts a value to SI. Unsupported units pass the value through with
/// supported=false so the caller can flag the entry for review.
inline UnitConversion normalize_unit(double value, std::string_view unit_raw) {
  UnitConversion out;
  auto p = parse_unit(unit_raw);
  if (!p) {
    out.value_si = value;
    out.unit_si = text::trim(unit_raw);
    out.supported = false;
    return out;
  }
  out.pow10 = p->pow10;
  out.value_si = decimal::scale_pow10(value, p->pow10);
  out.unit_si = detail::format_dimension(p->dim);
  return out;
}

/// Inverse of normalize_unit for supported units.
inline std::optional<double> from_si(double value_si, std::string_view unit_raw) {
  auto p = parse_unit(unit_raw);
  if (!p) return std::nullopt;
  return decimal::scale_pow10(value_si, -p->pow10);
}

}  // namespace cmdb::units
