#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "cmdb/error.hpp"
#include "cmdb/schema/units.hpp"
#include "cmdb/util/text.hpp"
#include "cmdb/util/utf8.hpp"
#include "json.hpp"

namespace cmdb::scaled {

enum class ResolutionFlag { as_printed, scale_resolved, ambiguous };

inline const char* to_string(ResolutionFlag f) {
  switch (f) {
    case ResolutionFlag::as_printed: return "as_printed";
    case ResolutionFlag::scale_resolved: return "scale_resolved";
    case ResolutionFlag::ambiguous: return "ambiguous";
  }
  return "as_printed";
}

inline bool resolution_flag_from_string(std::string_view s, ResolutionFlag& out) {
  for (auto f : {ResolutionFlag::as_printed, ResolutionFlag::scale_resolved, ResolutionFlag::ambiguous}) {
    if (s == to_string(f)) {
      out = f;
      return true;
    }
  }
  return false;
}

struct Band {
  double lo = 0.0;
  double hi = 0.0;
  std::string unit_si;
};

struct ResolvedValue {
  double value_si = 0.0;
  ResolutionFlag flag = ResolutionFlag::as_printed;
  std::string unit_si;
  bool unit_supported = true;
};

/// Parses "×10^3", "x10^3", "×10³", "\times 10^{3}", "10^-3", "(×10^3)" to
/// the exponent. Empty input means no scale notation.
inline std::optional<int> parse_scale_notation(std::string_view notation) {
  std::string t = text::trim(notation);
  if (t.empty()) return std::nullopt;
  auto bad = [&]() { return Error(errc::bad_scale_notation, "cannot parse scale notation '" + t + "'"); };
  if (t.front() == '(' && t.back() == ')') t = text::trim(std::string_view(t).substr(1, t.size() - 2));
  std::u32string s = utf8::decode(t);
  std::size_t i = 0;
  auto ws = [&]() {
    while (i < s.size() && (s[i] == U' ' || s[i] == U'$')) ++i;
  };
  ws();
  const std::u32string times = U"\\times";
  if (s.compare(i, times.size(), times) == 0) {
    i += times.size();
  } else if (i < s.size() && (s[i] == U'×' || s[i] == U'x' || s[i] == U'X' || s[i] == U'*' ||
                              s[i] == U'·' || s[i] == U'⋅')) {
    ++i;
  }
  ws();
  if (s.compare(i, 2, U"10") != 0) throw bad();
  i += 2;
  ws();
  int sign = 1;
  int value = 0;
  std::size_t digits = 0;
  static const std::u32string sup = U"⁰¹²³⁴⁵⁶⁷⁸⁹";
  if (i < s.size() && s[i] == U'^') {
    ++i;
    bool braced = false;
    if (i < s.size() && s[i] == U'{') {
      braced = true;
      ++i;
    }
    if (i < s.size() && (s[i] == U'-' || s[i] == U'−')) {
      sign = -1;
      ++i;
    } else if (i < s.size() && s[i] == U'+') {
      ++i;
    }
    while (i < s.size() && s[i] >= U'0' && s[i] <= U'9') {
      value = value * 10 + static_cast<int>(s[i++] - U'0');
      ++digits;
    }
    if (braced) {
      if (i >= s.size() || s[i] != U'}') throw bad();
      ++i;
    }
  } else {
    if (i < s.size() && s[i] == U'⁻') {
      sign = -1;
      ++i;
    } else if (i < s.size() && s[i] == U'⁺') {
      ++i;
    }
    while (i < s.size() && sup.find(s[i]) != std::u32string::npos) {
      value = value * 10 + static_cast<int>(sup.find(s[i++]));
      ++digits;
    }
  }
  ws();
  if (digits == 0 || i != s.size() || value > 300) throw bad();
  return sign * value;
}

namespace detail {
inline bool in_band(double v, const Band& b) {
  const double m = std::fabs(v);
  return m >= b.lo && m <= b.hi;
}
}  // namespace detail

/// Scale-header disambiguation. A header such as "η (×10^3 Pa·s)" is read
/// either as "the printed number times 10^k" or "the quantity was
/// multiplied by 10^k before printing". The candidates {v·10^k, v·10^-k, v}
/// are converted to SI and tested against the plausibility band; exactly one
/// hit resolves the value, otherwise the literal reading is kept and the
/// entry is flagged ambiguous. Candidate values are produced by decimal
/// exponent shifts so no digits are invented.
inline ResolvedValue resolve_scaled_value(double value_raw, std::string_view scale_notation,
                                          std::string_view quantity_kind, const std::optional<Band>& band,
                                          std::string_view unit_raw = "") {
  (void)quantity_kind;
  ResolvedValue out;
  const auto k = parse_scale_notation(scale_notation);
  const auto unit = units::parse_unit(unit_raw);
  out.unit_supported = unit.has_value();
  out.unit_si = unit ? units::si_unit_name(unit_raw) : text::trim(unit_raw);
  const int unit_pow = unit ? unit->pow10 : 0;
  if (!k) {
    out.value_si = decimal::scale_pow10(value_raw, unit_pow);
    out.flag = ResolutionFlag::as_printed;
    return out;
  }
  if (band && !(band->lo < band->hi)) {
    throw Error(errc::bad_plausibility_table, "plausibility band requires lo < hi");
  }
  const double literal = decimal::scale_pow10(value_raw, *k + unit_pow);
  if (!band) {
    out.value_si = literal;
    out.flag = ResolutionFlag::ambiguous;
    return out;
  }
  const double candidates[3] = {literal, decimal::scale_pow10(value_raw, -*k + unit_pow),
                                decimal::scale_pow10(value_raw, unit_pow)};
  int hits = 0;
  double hit = literal;
  for (int c = 0; c < 3; ++c) {
    if (c == 2 && *k == 0) break;  // same as the first candidate
    if (detail::in_band(candidates[c], *band)) {
      ++hits;
      hit = candidates[c];
    }
  }
  if (*k == 0 && hits == 2) hits = 1;  // v·10^0 and v·10^-0 coincide
  if (hits == 1) {
    out.value_si = hit;
    out.flag = ResolutionFlag::scale_resolved;
  } else {
    out.value_si = literal;
    out.flag = ResolutionFlag::ambiguous;
  }
  return out;
}

/// quantity_kind -> band (SI). Keys starting with "_" are metadata.
class PlausibilityTable {
public:
  static PlausibilityTable from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(errc::bad_plausibility_table, "plausibility table must be a JSON object");
    PlausibilityTable t;
    for (const auto& [key, v] : j.items()) {
      if (!key.empty() && key[0] == '_') {
        if (key == "_version" && v.is_string()) t.version_ = v.get<std::string>();
        if (key == "_version" && v.is_number_integer()) t.version_ = std::to_string(v.get<long long>());
        continue;
      }
      if (!v.is_object() || !v.contains("lo") || !v.contains("hi") || !v["lo"].is_number() ||
          !v["hi"].is_number()) {
        throw Error(errc::bad_plausibility_table, "entry '" + key + "' needs numeric lo and hi");
      }
      Band b{v["lo"].get<double>(), v["hi"].get<double>(), v.value("unit_si", std::string())};
      if (!(b.lo < b.hi)) throw Error(errc::bad_plausibility_table, "entry '" + key + "' has lo >= hi");
      t.bands_[text::fold(key)] = b;
    }
    return t;
  }

  static PlausibilityTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(errc::bad_plausibility_table, "cannot read " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::bad_plausibility_table, path.string() + ": " + e.what());
    }
  }

  static std::filesystem::path default_path() {
#ifdef CMDB_SOURCE_DIR
    return std::filesystem::path(CMDB_SOURCE_DIR) / "config" / "plausibility.json";
#else
    return "config/plausibility.json";
#endif
  }

  std::optional<Band> find(std::string_view kind) const {
    auto it = bands_.find(text::fold(kind));
    if (it == bands_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& version() const { return version_; }
  std::size_t size() const { return bands_.size(); }

private:
  std::map<std::string, Band> bands_;
  std::string version_;
};

inline ResolvedValue resolve_scaled_value(double value_raw, std::string_view scale_notation,
                                          std::string_view quantity_kind, const PlausibilityTable& table,
                                          std::string_view unit_raw = "") {
  return resolve_scaled_value(value_raw, scale_notation, quantity_kind, table.find(quantity_kind), unit_raw);
}

}  // namespace cmdb::scaled
