#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cmdb/agent/provider.hpp"
#include "json.hpp"

namespace cmdb::pipeline {

struct TierTokens {
  std::int64_t calls = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t total() const { return prompt_tokens + completion_tokens; }
};

struct CostReport {
  TierTokens gatekeeper;
  TierTokens analyst;
  std::int64_t docs_screened = 0;
  std::int64_t docs_extracted = 0;
  std::int64_t actual_total_tokens = 0;
  std::int64_t hypothetical_single_stage_tokens = 0;
  double savings_ratio = 0.0;
};

inline nlohmann::json to_json(const TierTokens& t) {
  return {{"calls", t.calls}, {"prompt_tokens", t.prompt_tokens}, {"completion_tokens", t.completion_tokens},
          {"total_tokens", t.total()}};
}

inline nlohmann::json to_json(const CostReport& c) {
  return {{"gatekeeper_tier", to_json(c.gatekeeper)},
          {"analyst_tier", to_json(c.analyst)},
          {"docs_screened", c.docs_screened},
          {"docs_extracted", c.docs_extracted},
          {"actual_total_tokens", c.actual_total_tokens},
          {"hypothetical_single_stage_tokens", c.hypothetical_single_stage_tokens},
          {"savings_ratio", c.savings_ratio}};
}

/// Tallies a run's call log. `single_stage_tokens` holds, per screened
/// document, the estimated prompt size of sending its full text straight
/// to the analyst tier (4 chars/token); savings_ratio = 1 - actual/that.
inline CostReport account_cost(const std::vector<agent::CallRecord>& log,
                               const std::map<std::string, std::int64_t>& single_stage_tokens) {
  CostReport c;
  std::set<std::string> screened, extracted;
  for (const auto& r : log) {
    TierTokens& t = r.tier == agent::ModelTier::analyst_tier ? c.analyst : c.gatekeeper;
    ++t.calls;
    t.prompt_tokens += r.prompt_tokens;
    t.completion_tokens += r.completion_tokens;
    (r.tier == agent::ModelTier::analyst_tier ? extracted : screened).insert(r.doc_id);
  }
  for (const auto& d : extracted) screened.insert(d);
  c.docs_screened = static_cast<std::int64_t>(screened.size());
  c.docs_extracted = static_cast<std::int64_t>(extracted.size());
  c.actual_total_tokens = c.gatekeeper.total() + c.analyst.total();
  for (const auto& [doc, n] : single_stage_tokens) c.hypothetical_single_stage_tokens += n;
  c.savings_ratio = c.hypothetical_single_stage_tokens > 0
                        ? 1.0 - static_cast<double>(c.actual_total_tokens) /
                                    static_cast<double>(c.hypothetical_single_stage_tokens)
                        : 0.0;
  return c;
}

}  // namespace cmdb::pipeline
