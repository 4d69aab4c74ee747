#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cmdb/error.hpp"
#include "cmdb/schema/latex.hpp"
#include "cmdb/schema/scaled.hpp"
#include "cmdb/schema/units.hpp"
#include "cmdb/util/sha256.hpp"
#include "cmdb/util/text.hpp"
#include "json.hpp"

namespace cmdb::schema {

using scaled::ResolutionFlag;

/// Bumped whenever the record layout or its validation rules change; part
/// of the pipeline's resume key.
inline constexpr const char* kSchemaVersion = "1";

// ------------------------------------------------------------------ enums

enum class Mechanism {
  elasto_plasticity,
  failure_damage,
  rheology_time_dependent,
  elasticity,
  viscoelasticity,
  hyperelasticity,
  coupled_environmental,
  other
};

inline constexpr Mechanism kAllMechanisms[] = {
    Mechanism::elasto_plasticity, Mechanism::failure_damage,  Mechanism::rheology_time_dependent,
    Mechanism::elasticity,        Mechanism::viscoelasticity, Mechanism::hyperelasticity,
    Mechanism::coupled_environmental, Mechanism::other};

inline const char* to_string(Mechanism m) {
  switch (m) {
    case Mechanism::elasto_plasticity: return "elasto_plasticity";
    case Mechanism::failure_damage: return "failure_damage";
    case Mechanism::rheology_time_dependent: return "rheology_time_dependent";
    case Mechanism::elasticity: return "elasticity";
    case Mechanism::viscoelasticity: return "viscoelasticity";
    case Mechanism::hyperelasticity: return "hyperelasticity";
    case Mechanism::coupled_environmental: return "coupled_environmental";
    case Mechanism::other: return "other";
  }
  return "other";
}

inline std::optional<Mechanism> mechanism_from_string(std::string_view s) {
  for (auto m : kAllMechanisms) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

enum class MaterialClass { stone, brick, mortar, timber, earthen, clay_suspension, composite_masonry, other };

inline constexpr MaterialClass kAllMaterialClasses[] = {
    MaterialClass::stone,   MaterialClass::brick,           MaterialClass::mortar,
    MaterialClass::timber,  MaterialClass::earthen,         MaterialClass::clay_suspension,
    MaterialClass::composite_masonry, MaterialClass::other};

inline const char* to_string(MaterialClass c) {
  switch (c) {
    case MaterialClass::stone: return "stone";
    case MaterialClass::brick: return "brick";
    case MaterialClass::mortar: return "mortar";
    case MaterialClass::timber: return "timber";
    case MaterialClass::earthen: return "earthen";
    case MaterialClass::clay_suspension: return "clay_suspension";
    case MaterialClass::composite_masonry: return "composite_masonry";
    case MaterialClass::other: return "other";
  }
  return "other";
}

inline std::optional<MaterialClass> material_class_from_string(std::string_view s) {
  for (auto c : kAllMaterialClasses) {
    if (s == to_string(c)) return c;
  }
  return std::nullopt;
}

enum class ReviewStatus { unverified, verified, rejected, edited };

inline const char* to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::unverified: return "unverified";
    case ReviewStatus::verified: return "verified";
    case ReviewStatus::rejected: return "rejected";
    case ReviewStatus::edited: return "edited";
  }
  return "unverified";
}

inline std::optional<ReviewStatus> review_status_from_string(std::string_view s) {
  for (auto v : {ReviewStatus::unverified, ReviewStatus::verified, ReviewStatus::rejected, ReviewStatus::edited}) {
    if (s == to_string(v)) return v;
  }
  return std::nullopt;
}

// ------------------------------------------------------------------ types

struct SymbolBinding {
  std::string symbol;
  std::string definition;
  std::string unit = "dimensionless";
  friend bool operator==(const SymbolBinding&, const SymbolBinding&) = default;
};

struct ParameterEntry {
  std::string symbol;
  double value_raw = 0.0;
  std::optional<std::string> scale_notation;
  std::string unit_raw;
  double value_si = 0.0;
  std::string unit_si;
  std::string provenance;
  ResolutionFlag resolution_flag = ResolutionFlag::as_printed;
  friend bool operator==(const ParameterEntry&, const ParameterEntry&) = default;
};

struct MaterialMeta {
  std::string material_name;
  MaterialClass material_class = MaterialClass::other;
  std::string provenance_note;
  std::string test_conditions;
  friend bool operator==(const MaterialMeta&, const MaterialMeta&) = default;
};

struct ValidationInfo {
  std::string method;
  bool present = false;
  friend bool operator==(const ValidationInfo&, const ValidationInfo&) = default;
};

struct Record {
  std::string record_id;
  std::string doc_id;
  std::string equation_latex;
  std::vector<SymbolBinding> symbol_map;
  MaterialMeta material;
  std::vector<ParameterEntry> parameters;
  ValidationInfo validation;
  Mechanism mechanism = Mechanism::other;
  double confidence = 1.0;
  ReviewStatus review_status = ReviewStatus::unverified;
  friend bool operator==(const Record&, const Record&) = default;
};

struct FieldError {
  std::string json_path;
  std::string message;
  friend bool operator==(const FieldError&, const FieldError&) = default;
};

struct ValidationReport {
  bool valid = true;
  std::vector<FieldError> errors;
};

struct GroundingReport {
  bool grounded = true;
  std::vector<std::string> ungrounded_symbols;
  std::vector<std::string> orphan_bindings;
  std::vector<std::string> duplicate_definitions;
};

// ------------------------------------------------------------ constructors

inline ValidationInfo make_validation(std::string method) {
  ValidationInfo v;
  v.method = text::trim(method);
  v.present = !v.method.empty();
  return v;
}

/// Builds a parameter with its SI value filled in. With scale notation the
/// value goes through plausibility-based disambiguation.
inline ParameterEntry make_parameter(std::string symbol, double value_raw, std::string unit_raw,
                                     std::optional<std::string> scale_notation = std::nullopt,
                                     std::string_view quantity_kind = {},
                                     const scaled::PlausibilityTable* table = nullptr,
                                     std::string provenance = {}) {
  ParameterEntry p;
  p.symbol = latex::canonical_symbol(symbol);
  p.value_raw = value_raw;
  p.unit_raw = std::move(unit_raw);
  p.scale_notation = std::move(scale_notation);
  if (p.scale_notation && text::trim(*p.scale_notation).empty()) p.scale_notation.reset();
  p.provenance = std::move(provenance);
  std::optional<scaled::Band> band;
  if (table) band = table->find(quantity_kind);
  const auto r = scaled::resolve_scaled_value(value_raw, p.scale_notation.value_or(""), quantity_kind, band,
                                              p.unit_raw);
  p.value_si = r.value_si;
  p.unit_si = r.unit_si;
  p.resolution_flag = r.flag;
  return p;
}

/// Stable id over (doc, canonical equation, material).
inline std::string make_record_id(std::string_view doc_id, std::string_view equation_latex,
                                  std::string_view material_name) {
  std::string canon;
  try {
    canon = latex::normalize_equation(equation_latex);
  } catch (const Error&) {
    canon = std::string(equation_latex);
  }
  const std::string key = std::string(doc_id) + '\x1f' + canon + '\x1f' + text::fold(material_name);
  return "cm-" + sha256_hex(key).substr(0, 16);
}

// ------------------------------------------------------------------ JSON

inline nlohmann::json to_json(const SymbolBinding& b) {
  return {{"symbol", b.symbol}, {"definition", b.definition}, {"unit", b.unit}};
}

inline nlohmann::json to_json(const ParameterEntry& p) {
  nlohmann::json j = {{"symbol", p.symbol},
                      {"value_raw", p.value_raw},
                      {"scale_notation", p.scale_notation ? nlohmann::json(*p.scale_notation) : nlohmann::json()},
                      {"unit_raw", p.unit_raw},
                      {"value_si", p.value_si},
                      {"unit_si", p.unit_si},
                      {"provenance", p.provenance},
                      {"resolution_flag", scaled::to_string(p.resolution_flag)}};
  return j;
}

inline nlohmann::json to_json(const MaterialMeta& m) {
  return {{"material_name", m.material_name},
          {"material_class", to_string(m.material_class)},
          {"provenance_note", m.provenance_note},
          {"test_conditions", m.test_conditions}};
}

inline nlohmann::json to_json(const Record& r) {
  nlohmann::json sm = nlohmann::json::array();
  for (const auto& b : r.symbol_map) sm.push_back(to_json(b));
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : r.parameters) ps.push_back(to_json(p));
  return {{"record_id", r.record_id},
          {"doc_id", r.doc_id},
          {"equation_latex", r.equation_latex},
          {"symbol_map", std::move(sm)},
          {"material", to_json(r.material)},
          {"parameters", std::move(ps)},
          {"validation", {{"method", r.validation.method}, {"present", r.validation.present}}},
          {"mechanism", to_string(r.mechanism)},
          {"confidence", r.confidence},
          {"review_status", to_string(r.review_status)}};
}

namespace detail {

inline std::string str_or(const nlohmann::json& j, const char* key, std::string def = {}) {
  if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
  return def;
}

}  // namespace detail

/// Reads a record that already passed validate_record. Throws
/// Error(invalid_record) otherwise.
inline Record record_from_json(const nlohmann::json& j);

// -------------------------------------------------------------- validation

namespace detail {

class Validator {
public:
  explicit Validator(const nlohmann::json& root) : root_(root) {}

  ValidationReport run() {
    if (!root_.is_object()) {
      add("$", "record must be a JSON object");
      return finish();
    }
    check_equation();
    const std::set<std::string> keys = check_symbol_map();
    check_material();
    check_parameters(keys);
    check_validation();
    check_mechanism();
    check_optional();
    return finish();
  }

private:
  void add(std::string path, std::string msg) { report_.errors.push_back({std::move(path), std::move(msg)}); }

  ValidationReport finish() {
    report_.valid = report_.errors.empty();
    return std::move(report_);
  }

  const nlohmann::json* require(const nlohmann::json& obj, const std::string& path, const char* key,
                                nlohmann::json::value_t type) {
    const std::string p = path + "." + key;
    if (!obj.contains(key)) {
      add(p, std::string("missing required field '") + key + "'");
      return nullptr;
    }
    const auto& v = obj[key];
    const bool ok = type == nlohmann::json::value_t::number_float ? v.is_number() : v.type() == type;
    if (!ok) {
      add(p, std::string("field '") + key + "' must be " + type_name(type));
      return nullptr;
    }
    return &v;
  }

  static const char* type_name(nlohmann::json::value_t t) {
    switch (t) {
      case nlohmann::json::value_t::string: return "a string";
      case nlohmann::json::value_t::array: return "an array";
      case nlohmann::json::value_t::object: return "an object";
      case nlohmann::json::value_t::boolean: return "a boolean";
      case nlohmann::json::value_t::number_float: return "a number";
      default: return "of the correct type";
    }
  }

  void optional_string(const nlohmann::json& obj, const std::string& path, const char* key) {
    if (obj.contains(key) && !obj[key].is_string()) add(path + "." + key, std::string("field '") + key + "' must be a string");
  }

  void check_equation() {
    const auto* eq = require(root_, "$", "equation_latex", nlohmann::json::value_t::string);
    if (!eq) return;
    const std::string s = eq->get<std::string>();
    if (text::trim(s).empty()) {
      add("$.equation_latex", "equation_latex must be non-empty");
      return;
    }
    if (!latex::braces_balanced(s)) {
      add("$.equation_latex", "equation_latex has unbalanced braces");
      return;
    }
    try {
      (void)latex::tokenize_equation(s);
    } catch (const Error& e) {
      add("$.equation_latex", e.what());
    }
  }

  std::set<std::string> check_symbol_map() {
    std::set<std::string> keys;
    const auto* sm = require(root_, "$", "symbol_map", nlohmann::json::value_t::array);
    if (!sm) return keys;
    for (std::size_t i = 0; i < sm->size(); ++i) {
      const std::string p = "$.symbol_map[" + std::to_string(i) + "]";
      const auto& b = (*sm)[i];
      if (!b.is_object()) {
        add(p, "symbol binding must be an object");
        continue;
      }
      if (const auto* sym = require(b, p, "symbol", nlohmann::json::value_t::string)) {
        const std::string s = sym->get<std::string>();
        if (!latex::is_single_identifier(s)) {
          add(p + ".symbol", "symbol '" + s + "' is not a single identifier token");
        } else if (!keys.insert(latex::canonical_symbol(s)).second) {
          add(p + ".symbol", "duplicate symbol '" + s + "' in symbol_map");
        }
      }
      if (const auto* def = require(b, p, "definition", nlohmann::json::value_t::string)) {
        if (text::trim(def->get<std::string>()).empty()) add(p + ".definition", "definition must be non-empty");
      }
      if (const auto* u = require(b, p, "unit", nlohmann::json::value_t::string)) {
        if (text::trim(u->get<std::string>()).empty()) {
          add(p + ".unit", "unit must be non-empty (use \"dimensionless\")");
        }
      }
    }
    return keys;
  }

  void check_material() {
    const auto* m = require(root_, "$", "material", nlohmann::json::value_t::object);
    if (!m) return;
    if (const auto* name = require(*m, "$.material", "material_name", nlohmann::json::value_t::string)) {
      if (text::trim(name->get<std::string>()).empty()) add("$.material.material_name", "material_name must be non-empty");
    }
    if (const auto* c = require(*m, "$.material", "material_class", nlohmann::json::value_t::string)) {
      if (!material_class_from_string(c->get<std::string>())) {
        add("$.material.material_class", "unknown material_class '" + c->get<std::string>() + "'");
      }
    }
    optional_string(*m, "$.material", "provenance_note");
    optional_string(*m, "$.material", "test_conditions");
  }

  void check_parameters(const std::set<std::string>& keys) {
    const auto* ps = require(root_, "$", "parameters", nlohmann::json::value_t::array);
    if (!ps) return;
    for (std::size_t i = 0; i < ps->size(); ++i) {
      const std::string p = "$.parameters[" + std::to_string(i) + "]";
      const auto& e = (*ps)[i];
      if (!e.is_object()) {
        add(p, "parameter must be an object");
        continue;
      }
      if (const auto* sym = require(e, p, "symbol", nlohmann::json::value_t::string)) {
        const std::string s = sym->get<std::string>();
        if (!keys.count(latex::canonical_symbol(s))) {
          add(p + ".symbol", "parameter symbol '" + s + "' is not defined in symbol_map");
        }
      }
      const auto* raw = require(e, p, "value_raw", nlohmann::json::value_t::number_float);
      bool has_scale = false;
      if (e.contains("scale_notation") && !e["scale_notation"].is_null()) {
        if (!e["scale_notation"].is_string()) {
          add(p + ".scale_notation", "scale_notation must be a string or null");
        } else {
          try {
            has_scale = scaled::parse_scale_notation(e["scale_notation"].get<std::string>()).has_value();
          } catch (const Error& err) {
            add(p + ".scale_notation", err.what());
          }
        }
      }
      const auto* unit_raw = require(e, p, "unit_raw", nlohmann::json::value_t::string);
      const auto* si = require(e, p, "value_si", nlohmann::json::value_t::number_float);
      require(e, p, "unit_si", nlohmann::json::value_t::string);
      optional_string(e, p, "provenance");
      ResolutionFlag flag = ResolutionFlag::as_printed;
      if (const auto* f = require(e, p, "resolution_flag", nlohmann::json::value_t::string)) {
        if (!scaled::resolution_flag_from_string(f->get<std::string>(), flag)) {
          add(p + ".resolution_flag", "unknown resolution_flag '" + f->get<std::string>() + "'");
        }
      }
      if (flag == ResolutionFlag::ambiguous) any_ambiguous_ = true;
      if (raw && si && unit_raw && !has_scale) {
        const auto conv = units::normalize_unit(raw->get<double>(), unit_raw->get<std::string>());
        const double want = conv.value_si;
        const double got = si->get<double>();
        const double tol = 1e-9 * std::max(std::fabs(want), std::fabs(got));
        if (std::fabs(want - got) > tol) {
          add(p + ".value_si", "value_si " + decimal::shortest(got) + " is not the SI conversion of value_raw (" +
                                   decimal::shortest(want) + ")");
        }
      }
    }
  }

  void check_validation() {
    const auto* v = require(root_, "$", "validation", nlohmann::json::value_t::object);
    if (!v) return;
    const auto* method = require(*v, "$.validation", "method", nlohmann::json::value_t::string);
    const auto* present = require(*v, "$.validation", "present", nlohmann::json::value_t::boolean);
    if (method && present) {
      const bool has = !text::trim(method->get<std::string>()).empty();
      if (present->get<bool>() != has) {
        add("$.validation.present", "present must be true exactly when method is non-empty");
      }
    }
  }

  void check_mechanism() {
    const auto* m = require(root_, "$", "mechanism", nlohmann::json::value_t::string);
    if (m && !mechanism_from_string(m->get<std::string>())) {
      add("$.mechanism", "unknown mechanism '" + m->get<std::string>() + "'");
    }
  }

  void check_optional() {
    optional_string(root_, "$", "record_id");
    optional_string(root_, "$", "doc_id");
    if (root_.contains("confidence")) {
      const auto& c = root_["confidence"];
      if (!c.is_number() || c.get<double>() < 0.0 || c.get<double>() > 1.0) {
        add("$.confidence", "confidence must be a number in [0, 1]");
      }
    }
    if (root_.contains("review_status")) {
      const auto& s = root_["review_status"];
      if (!s.is_string() || !review_status_from_string(s.get<std::string>())) {
        add("$.review_status", "review_status must be one of unverified, verified, rejected, edited");
      } else if (any_ambiguous_ && s.get<std::string>() != "unverified") {
        add("$.review_status", "records with an ambiguous parameter must stay unverified");
      }
    }
  }

  const nlohmann::json& root_;
  ValidationReport report_;
  bool any_ambiguous_ = false;
};

}  // namespace detail

/// Checks required fields, types, enum membership and the record
/// invariants. Total: every failure is reported, nothing throws.
inline ValidationReport validate_record(const nlohmann::json& candidate) {
  return detail::Validator(candidate).run();
}

/// Parses text first; a syntax failure is one error at the root path.
inline ValidationReport validate_record_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    return {false, {{"$", std::string("invalid JSON: ") + e.what()}}};
  }
  return validate_record(j);
}

inline Record record_from_json(const nlohmann::json& j) {
  const auto rep = validate_record(j);
  if (!rep.valid) {
    throw Error(errc::invalid_record, rep.errors.front().json_path + ": " + rep.errors.front().message);
  }
  Record r;
  r.record_id = detail::str_or(j, "record_id");
  r.doc_id = detail::str_or(j, "doc_id");
  r.equation_latex = j["equation_latex"].get<std::string>();
  for (const auto& b : j["symbol_map"]) {
    r.symbol_map.push_back({b["symbol"].get<std::string>(), b["definition"].get<std::string>(),
                            b["unit"].get<std::string>()});
  }
  const auto& m = j["material"];
  r.material.material_name = m["material_name"].get<std::string>();
  r.material.material_class = *material_class_from_string(m["material_class"].get<std::string>());
  r.material.provenance_note = detail::str_or(m, "provenance_note");
  r.material.test_conditions = detail::str_or(m, "test_conditions");
  for (const auto& e : j["parameters"]) {
    ParameterEntry p;
    p.symbol = e["symbol"].get<std::string>();
    p.value_raw = e["value_raw"].get<double>();
    if (e.contains("scale_notation") && e["scale_notation"].is_string()) {
      p.scale_notation = e["scale_notation"].get<std::string>();
    }
    p.unit_raw = e["unit_raw"].get<std::string>();
    p.value_si = e["value_si"].get<double>();
    p.unit_si = e["unit_si"].get<std::string>();
    p.provenance = detail::str_or(e, "provenance");
    scaled::resolution_flag_from_string(e["resolution_flag"].get<std::string>(), p.resolution_flag);
    r.parameters.push_back(std::move(p));
  }
  r.validation.method = j["validation"]["method"].get<std::string>();
  r.validation.present = j["validation"]["present"].get<bool>();
  r.mechanism = *mechanism_from_string(j["mechanism"].get<std::string>());
  if (j.contains("confidence")) r.confidence = j["confidence"].get<double>();
  if (j.contains("review_status")) r.review_status = *review_status_from_string(j["review_status"].get<std::string>());
  return r;
}

// --------------------------------------------------------------- grounding

/// Compares the symbol map's keys with the equation's symbol set and checks
/// that no two symbols share a definition (case-folded).
inline GroundingReport check_grounding(std::string_view equation_latex, const std::vector<SymbolBinding>& symbol_map,
                                       const latex::SymbolWhitelist& whitelist = {}) {
  GroundingReport rep;
  const std::vector<std::string> eq_symbols = latex::extract_equation_symbols(equation_latex, whitelist);
  const std::set<std::string> eq_set(eq_symbols.begin(), eq_symbols.end());
  std::set<std::string> keys;
  std::vector<std::string> key_order;
  for (const auto& b : symbol_map) {
    const std::string k = latex::canonical_symbol(b.symbol);
    if (keys.insert(k).second) key_order.push_back(k);
  }
  for (const auto& s : eq_symbols) {
    if (!keys.count(s)) rep.ungrounded_symbols.push_back(s);
  }
  for (const auto& k : key_order) {
    if (!eq_set.count(k)) rep.orphan_bindings.push_back(k);
  }
  std::map<std::string, int> def_count;
  std::vector<std::string> def_order;
  for (const auto& b : symbol_map) {
    const std::string d = text::fold(b.definition);
    if (def_count[d]++ == 1) def_order.push_back(d);
  }
  rep.duplicate_definitions = def_order;
  rep.grounded = rep.ungrounded_symbols.empty() && rep.orphan_bindings.empty() && rep.duplicate_definitions.empty();
  return rep;
}

inline nlohmann::json to_json(const GroundingReport& g) {
  return {{"grounded", g.grounded},
          {"ungrounded_symbols", g.ungrounded_symbols},
          {"orphan_bindings", g.orphan_bindings},
          {"duplicate_definitions", g.duplicate_definitions}};
}

inline nlohmann::json to_json(const ValidationReport& v) {
  nlohmann::json errs = nlohmann::json::array();
  for (const auto& e : v.errors) errs.push_back({{"json_path", e.json_path}, {"message", e.message}});
  return {{"valid", v.valid}, {"errors", std::move(errs)}};
}

}  // namespace cmdb::schema
