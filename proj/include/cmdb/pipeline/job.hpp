#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cmdb/agent/analyst.hpp"
#include "cmdb/agent/gatekeeper.hpp"
#include "cmdb/error.hpp"
#include "cmdb/util/clock.hpp"
#include "json.hpp"

namespace cmdb::pipeline {

enum class JobState { queued, parsed, screening, rejected, extracting, needs_review, verified, failed };

inline constexpr JobState kAllJobStates[] = {JobState::queued,     JobState::parsed,       JobState::screening,
                                             JobState::rejected,   JobState::extracting,   JobState::needs_review,
                                             JobState::verified,   JobState::failed};

inline const char* to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::parsed: return "parsed";
    case JobState::screening: return "screening";
    case JobState::rejected: return "rejected";
    case JobState::extracting: return "extracting";
    case JobState::needs_review: return "needs_review";
    case JobState::verified: return "verified";
    case JobState::failed: return "failed";
  }
  return "failed";
}

inline std::optional<JobState> job_state_from_string(std::string_view s) {
  for (auto st : kAllJobStates) {
    if (s == to_string(st)) return st;
  }
  return std::nullopt;
}

/// The lifecycle graph. Besides the happy path, any pre-review stage may
/// fall to failed (unreadable PDF, provider outage, timeout).
inline bool is_legal_transition(JobState from, JobState to) {
  using S = JobState;
  switch (from) {
    case S::queued: return to == S::parsed || to == S::failed;
    case S::parsed: return to == S::screening || to == S::failed;
    case S::screening: return to == S::rejected || to == S::extracting || to == S::failed;
    case S::extracting: return to == S::needs_review || to == S::failed;
    case S::needs_review: return to == S::verified || to == S::rejected;
    case S::rejected:
    case S::verified:
    case S::failed: return false;
  }
  return false;
}

inline bool is_terminal(JobState s) { return s == JobState::rejected || s == JobState::verified || s == JobState::failed; }

/// States a finished run can leave a document in.
inline bool is_settled(JobState s) { return is_terminal(s) || s == JobState::needs_review; }

struct Transition {
  JobState state = JobState::queued;
  std::string at;
};

struct ExtractionJob {
  std::string doc_id;
  std::string sha256;
  std::string source_path;
  std::string prompt_version;
  std::string schema_version;
  JobState state = JobState::queued;
  std::vector<Transition> transitions;
  std::string error_code;
  std::string error;
  bool manual_screening = false;  // the gate reply stayed unreadable after repair
  std::optional<agent::GateVerdict> gate;
  int analyst_attempts = 0;
  std::vector<agent::TraceEntry> correction_trace;
  std::vector<std::string> record_ids;
  std::int64_t hypothetical_tokens = 0;  // single-stage analyst prompt estimate
};

inline ExtractionJob new_job(std::string doc_id, std::string sha256, std::string source_path, std::string prompt_version,
                             std::string schema_version) {
  ExtractionJob j;
  j.doc_id = std::move(doc_id);
  j.sha256 = std::move(sha256);
  j.source_path = std::move(source_path);
  j.prompt_version = std::move(prompt_version);
  j.schema_version = std::move(schema_version);
  j.transitions.push_back({JobState::queued, now_iso8601()});
  return j;
}

/// Throws Error(illegal_transition) and leaves the job untouched when the
/// edge is not in the lifecycle graph.
inline void transition(ExtractionJob& job, JobState to) {
  if (!is_legal_transition(job.state, to)) {
    throw Error(errc::illegal_transition,
                job.doc_id + ": illegal transition " + to_string(job.state) + " -> " + to_string(to));
  }
  job.state = to;
  job.transitions.push_back({to, now_iso8601()});
}

inline void fail(ExtractionJob& job, std::string code, std::string message) {
  job.error_code = std::move(code);
  job.error = std::move(message);
  transition(job, JobState::failed);
}

inline nlohmann::json to_json(const ExtractionJob& j) {
  nlohmann::json tr = nlohmann::json::array();
  for (const auto& t : j.transitions) tr.push_back({{"state", to_string(t.state)}, {"at", t.at}});
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& t : j.correction_trace) {
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& e : t.errors) errs.push_back({{"json_path", e.json_path}, {"message", e.message}});
    trace.push_back({{"attempt", t.attempt}, {"errors", std::move(errs)}});
  }
  nlohmann::json out = {{"doc_id", j.doc_id},
                        {"sha256", j.sha256},
                        {"source_path", j.source_path},
                        {"prompt_version", j.prompt_version},
                        {"schema_version", j.schema_version},
                        {"state", to_string(j.state)},
                        {"transitions", std::move(tr)},
                        {"manual_screening", j.manual_screening},
                        {"analyst_attempts", j.analyst_attempts},
                        {"correction_trace", std::move(trace)},
                        {"record_ids", j.record_ids},
                        {"hypothetical_tokens", j.hypothetical_tokens}};
  out["error"] = j.error_code.empty() && j.error.empty() ? nlohmann::json()
                                                        : nlohmann::json{{"code", j.error_code}, {"message", j.error}};
  out["gate"] = j.gate ? agent::to_json(*j.gate) : nlohmann::json();
  return out;
}

inline ExtractionJob job_from_json(const nlohmann::json& j) {
  ExtractionJob out;
  out.doc_id = j.at("doc_id").get<std::string>();
  out.sha256 = j.value("sha256", std::string());
  out.source_path = j.value("source_path", std::string());
  out.prompt_version = j.value("prompt_version", std::string());
  out.schema_version = j.value("schema_version", std::string());
  const auto st = job_state_from_string(j.at("state").get<std::string>());
  if (!st) throw Error(errc::bad_config, "unknown job state for " + out.doc_id);
  out.state = *st;
  for (const auto& t : j.value("transitions", nlohmann::json::array())) {
    const auto ts = job_state_from_string(t.at("state").get<std::string>());
    if (!ts) throw Error(errc::bad_config, "unknown job state in history of " + out.doc_id);
    out.transitions.push_back({*ts, t.value("at", std::string())});
  }
  if (j.contains("error") && j["error"].is_object()) {
    out.error_code = j["error"].value("code", std::string());
    out.error = j["error"].value("message", std::string());
  }
  out.manual_screening = j.value("manual_screening", false);
  if (j.contains("gate") && j["gate"].is_object()) out.gate = agent::gate_verdict_from_json(j["gate"]);
  out.analyst_attempts = j.value("analyst_attempts", 0);
  for (const auto& t : j.value("correction_trace", nlohmann::json::array())) {
    agent::TraceEntry te;
    te.attempt = t.value("attempt", 0);
    for (const auto& e : t.value("errors", nlohmann::json::array())) {
      te.errors.push_back({e.value("json_path", std::string()), e.value("message", std::string())});
    }
    out.correction_trace.push_back(std::move(te));
  }
  out.record_ids = j.value("record_ids", std::vector<std::string>{});
  out.hypothetical_tokens = j.value("hypothetical_tokens", std::int64_t{0});
  return out;
}

/// True when every recorded step is an edge of the lifecycle graph.
inline bool history_is_legal(const ExtractionJob& j) {
  if (j.transitions.empty() || j.transitions.front().state != JobState::queued) return false;
  for (std::size_t i = 1; i < j.transitions.size(); ++i) {
    if (!is_legal_transition(j.transitions[i - 1].state, j.transitions[i].state)) return false;
  }
  return j.transitions.back().state == j.state;
}

}  // namespace cmdb::pipeline
