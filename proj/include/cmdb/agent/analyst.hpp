#pragma once

#include <set>
#include <string>
#include <vector>

#include "cmdb/agent/json_reply.hpp"
#include "cmdb/agent/prompts.hpp"
#include "cmdb/agent/provider.hpp"
#include "cmdb/ingest/document.hpp"
#include "cmdb/schema/record.hpp"

namespace cmdb::agent {

enum class ExtractionStatus { ok, failed_schema, provider_error };

inline const char* to_string(ExtractionStatus s) {
  switch (s) {
    case ExtractionStatus::ok: return "ok";
    case ExtractionStatus::failed_schema: return "failed_schema";
    case ExtractionStatus::provider_error: return "provider_error";
  }
  return "provider_error";
}

struct TraceEntry {
  int attempt = 0;
  std::vector<schema::FieldError> errors;
};

struct ExtractionResult {
  std::string doc_id;
  std::vector<schema::Record> records;
  int attempts = 0;
  std::vector<TraceEntry> correction_trace;
  ExtractionStatus status = ExtractionStatus::provider_error;
  std::string error_code;  // provider_unavailable, timeout, context_overflow, ...
  std::string error;
};

inline nlohmann::json to_json(const ExtractionResult& r) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& rec : r.records) recs.push_back(schema::to_json(rec));
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& t : r.correction_trace) {
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& e : t.errors) errs.push_back({{"json_path", e.json_path}, {"message", e.message}});
    trace.push_back({{"attempt", t.attempt}, {"errors", std::move(errs)}});
  }
  return {{"doc_id", r.doc_id},          {"records", std::move(recs)},
          {"attempts", r.attempts},      {"correction_trace", std::move(trace)},
          {"status", to_string(r.status)}, {"error_code", r.error_code}, {"error", r.error}};
}

struct AnalystOptions {
  int budget = 3;
  std::size_t context_chars = 1200;  // C_local: split evenly before and after each equation
  int max_output_tokens = 4096;
  const scaled::PlausibilityTable* plausibility = nullptr;
  latex::SymbolWhitelist whitelist{};
  std::optional<Clock::time_point> deadline;
};

/// The text around each equation candidate, used as grounding context.
inline std::string build_equation_contexts(const ingest::SerializedDoc& doc, std::size_t context_chars) {
  const std::u32string cps = utf8::decode(doc.full_text);
  const std::size_t half = context_chars / 2;
  std::string out;
  for (const auto& b : doc.equation_candidates) {
    if (b.kind == ingest::BlockKind::table_region) continue;
    const std::size_t lo = b.span.start > half ? b.span.start - half : 0;
    const std::size_t hi = std::min(cps.size(), b.span.end + half);
    out += "[" + b.block_id + "]\n";
    out += utf8::encode(std::u32string_view(cps).substr(lo, hi - lo));
    out += "\n\n";
  }
  if (out.empty()) out = "(no equation candidates detected)\n";
  return out;
}

inline ProviderRequest build_analyst_request(const ingest::SerializedDoc& doc, const AnalystOptions& opt) {
  ProviderRequest req;
  req.model_tier = ModelTier::analyst_tier;
  req.system_prompt = prompts::render(prompts::asset("analyst_system.txt"),
                                      {{"schema", std::string(prompts::asset("record_schema.json"))}});
  req.user_content = prompts::render(prompts::asset("analyst_user.txt"),
                                     {{"doc_id", doc.doc_id},
                                      {"contexts", build_equation_contexts(doc, opt.context_chars)},
                                      {"full_text", doc.full_text}});
  req.max_output_tokens = opt.max_output_tokens;
  return req;
}

namespace detail {

inline std::string rebase_path(const std::string& path, const std::string& prefix) {
  return path.size() >= 1 && path[0] == '$' ? prefix + path.substr(1) : prefix + "." + path;
}

/// Fills the fields the system owns: SI values, resolution flags, ids and
/// review status. The model supplies value_raw/unit_raw/scale_notation and an
/// optional quantity_kind hint, which is consumed here.
inline void post_process(nlohmann::json& rec, const std::string& doc_id, const AnalystOptions& opt,
                         const std::string& prefix, std::vector<schema::FieldError>& errors) {
  rec["doc_id"] = doc_id;
  rec["review_status"] = "unverified";
  if (!rec.contains("confidence")) rec["confidence"] = 1.0;
  if (rec.contains("parameters") && rec["parameters"].is_array()) {
    auto& ps = rec["parameters"];
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps[i];
      if (!p.is_object()) continue;
      std::string kind;
      if (p.contains("quantity_kind")) {
        if (p["quantity_kind"].is_string()) kind = p["quantity_kind"].get<std::string>();
        p.erase("quantity_kind");
      }
      if (!p.contains("provenance")) p["provenance"] = "";
      if (!p.contains("value_raw") || !p["value_raw"].is_number() || !p.contains("unit_raw") ||
          !p["unit_raw"].is_string()) {
        continue;  // the validator reports the missing pieces
      }
      std::string notation;
      if (p.contains("scale_notation") && p["scale_notation"].is_string()) notation = p["scale_notation"].get<std::string>();
      if (text::trim(notation).empty()) p["scale_notation"] = nullptr;
      try {
        std::optional<scaled::Band> band;
        if (opt.plausibility) band = opt.plausibility->find(kind);
        const auto r = scaled::resolve_scaled_value(p["value_raw"].get<double>(), notation, kind, band,
                                                    p["unit_raw"].get<std::string>());
        p["value_si"] = r.value_si;
        p["unit_si"] = r.unit_si;
        p["resolution_flag"] = scaled::to_string(r.flag);
      } catch (const Error& e) {
        errors.push_back({prefix + ".parameters[" + std::to_string(i) + "].scale_notation", e.what()});
      }
    }
  }
  if (rec.contains("validation") && rec["validation"].is_object()) {
    auto& v = rec["validation"];
    if (v.contains("method") && v["method"].is_string() && !v.contains("present")) {
      v["present"] = !text::trim(v["method"].get<std::string>()).empty();
    }
  }
  if (rec.contains("equation_latex") && rec["equation_latex"].is_string() && rec.contains("material") &&
      rec["material"].is_object() && rec["material"].contains("material_name") &&
      rec["material"]["material_name"].is_string()) {
    rec["record_id"] = schema::make_record_id(doc_id, rec["equation_latex"].get<std::string>(),
                                              rec["material"]["material_name"].get<std::string>());
  }
}

}  // namespace detail

/// Parses, post-processes, validates and grounds one analyst output. Returns
/// the records when the error list is empty.
inline std::vector<schema::Record> evaluate_analyst_output(const std::string& doc_id, const std::string& output,
                                                           const AnalystOptions& opt,
                                                           std::vector<schema::FieldError>& errors) {
  std::vector<schema::Record> records;
  nlohmann::json root;
  try {
    root = parse_reply(output);
  } catch (const nlohmann::json::parse_error& e) {
    errors.push_back({"$", std::string("invalid JSON: ") + e.what()});
    return records;
  }
  nlohmann::json list;
  std::string base = "$.records";
  if (root.is_object() && root.contains("records") && root["records"].is_array()) {
    list = root["records"];
  } else if (root.is_array()) {
    list = root;
    base = "$";
  } else {
    errors.push_back({"$", "expected an object with a 'records' array"});
    return records;
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string prefix = base + "[" + std::to_string(i) + "]";
    nlohmann::json rec = list[i];
    if (!rec.is_object()) {
      errors.push_back({prefix, "record must be a JSON object"});
      continue;
    }
    const std::size_t before = errors.size();
    detail::post_process(rec, doc_id, opt, prefix, errors);
    const auto rep = schema::validate_record(rec);
    for (const auto& e : rep.errors) errors.push_back({detail::rebase_path(e.json_path, prefix), e.message});
    if (errors.size() != before) continue;
    schema::Record r = schema::record_from_json(rec);
    schema::GroundingReport g;
    try {
      g = schema::check_grounding(r.equation_latex, r.symbol_map, opt.whitelist);
    } catch (const Error& e) {
      errors.push_back({prefix + ".equation_latex", e.what()});
      continue;
    }
    for (const auto& s : g.ungrounded_symbols) {
      errors.push_back({prefix + ".symbol_map", "symbol " + s + " appears in the equation but has no binding"});
    }
    for (const auto& s : g.orphan_bindings) {
      errors.push_back({prefix + ".symbol_map", "binding for " + s + " does not appear in the equation"});
    }
    for (const auto& d : g.duplicate_definitions) {
      errors.push_back({prefix + ".symbol_map", "definition '" + d + "' is shared by several symbols"});
    }
    if (!g.grounded) continue;
    if (!ids.insert(r.record_id).second) {
      errors.push_back({prefix, "duplicate record: same equation and material as an earlier record"});
      continue;
    }
    records.push_back(std::move(r));
  }
  if (!errors.empty()) records.clear();
  return records;
}

/// parse -> validate -> ground; on violations send the previous output
/// plus every {json_path, message} back as negative constraints, until a
/// fully valid output or the budget is spent.
inline ExtractionResult self_correct_loop(ProviderClient& client, const ingest::SerializedDoc& doc,
                                          std::string first_output, int budget, const AnalystOptions& opt = {},
                                          std::optional<ProviderRequest> base_request = std::nullopt) {
  if (budget < 1) throw std::invalid_argument("self_correct_loop: budget must be >= 1");
  ExtractionResult res;
  res.doc_id = doc.doc_id;
  const ProviderRequest base = base_request ? *base_request : build_analyst_request(doc, opt);
  std::string output = std::move(first_output);
  for (int attempt = 1;; ++attempt) {
    res.attempts = attempt;
    std::vector<schema::FieldError> errors;
    auto records = evaluate_analyst_output(doc.doc_id, output, opt, errors);
    if (errors.empty()) {
      res.records = std::move(records);
      res.status = ExtractionStatus::ok;
      return res;
    }
    res.correction_trace.push_back({attempt, errors});
    if (attempt >= budget) {
      res.status = ExtractionStatus::failed_schema;
      return res;
    }
    std::string constraints;
    for (const auto& e : errors) constraints += "- at " + e.json_path + ": " + e.message + "\n";
    ProviderRequest repair = base;
    repair.user_content = base.user_content + "\n\n" +
                          prompts::render(prompts::asset("analyst_repair.txt"),
                                          {{"previous", output}, {"constraints", constraints}});
    try {
      output = client.complete(repair, CallContext{"analyst", doc.doc_id, attempt + 1, opt.deadline}).text;
    } catch (const Error& e) {
      res.attempts = attempt + 1;
      res.status = ExtractionStatus::provider_error;
      res.error_code = e.code();
      res.error = e.what();
      return res;
    }
  }
}

/// Stage-II extraction over the full text.
inline ExtractionResult analyst_extract(ProviderClient& client, const ingest::SerializedDoc& doc,
                                        const AnalystOptions& opt = {}) {
  if (opt.budget < 1) throw std::invalid_argument("analyst_extract: budget must be >= 1");
  const ProviderRequest req = build_analyst_request(doc, opt);
  std::string first;
  try {
    first = client.complete(req, CallContext{"analyst", doc.doc_id, 1, opt.deadline}).text;
  } catch (const Error& e) {
    ExtractionResult res;
    res.doc_id = doc.doc_id;
    res.attempts = 1;
    res.status = ExtractionStatus::provider_error;
    res.error_code = e.code();
    res.error = e.what();
    return res;
  }
  return self_correct_loop(client, doc, std::move(first), opt.budget, opt, req);
}

}  // namespace cmdb::agent
