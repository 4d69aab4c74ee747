#pragma once

#include <string>

#include "cmdb/agent/json_reply.hpp"
#include "cmdb/agent/prompts.hpp"
#include "cmdb/agent/provider.hpp"
#include "cmdb/ingest/document.hpp"

namespace cmdb::agent {

struct GateVerdict {
  bool domain_relevance = false;
  bool theoretical_content = false;
  bool experimental_validation = false;
  bool relevant = false;
  std::string rationale;
  double score = 0.0;
  bool repaired = false;  // the first reply was unusable and one repair was needed
};

inline nlohmann::json to_json(const GateVerdict& v) {
  return {{"domain_relevance", v.domain_relevance},
          {"theoretical_content", v.theoretical_content},
          {"experimental_validation", v.experimental_validation},
          {"relevant", v.relevant},
          {"rationale", v.rationale},
          {"score", v.score},
          {"repaired", v.repaired}};
}

inline GateVerdict gate_verdict_from_json(const nlohmann::json& j) {
  GateVerdict v;
  v.domain_relevance = j.at("domain_relevance").get<bool>();
  v.theoretical_content = j.at("theoretical_content").get<bool>();
  v.experimental_validation = j.at("experimental_validation").get<bool>();
  v.relevant = j.at("relevant").get<bool>();
  v.rationale = j.value("rationale", std::string());
  v.score = j.value("score", 0.0);
  v.repaired = j.value("repaired", false);
  return v;
}

struct GateOptions {
  int max_output_tokens = 512;
};

namespace detail {

/// Reads a verdict reply. Throws std::runtime_error describing the problem.
inline GateVerdict parse_verdict(const std::string& reply) {
  nlohmann::json j;
  try {
    j = parse_reply(reply);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("reply is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("reply must be a JSON object");
  GateVerdict v;
  for (auto [key, field] : {std::pair{"domain_relevance", &v.domain_relevance},
                            std::pair{"theoretical_content", &v.theoretical_content},
                            std::pair{"experimental_validation", &v.experimental_validation}}) {
    if (!j.contains(key) || !j[key].is_boolean()) {
      throw std::runtime_error(std::string("field '") + key + "' must be a boolean");
    }
    *field = j[key].get<bool>();
  }
  if (j.contains("rationale") && j["rationale"].is_string()) v.rationale = j["rationale"].get<std::string>();
  // Never trust a model-supplied "relevant": it is the conjunction.
  v.relevant = v.domain_relevance && v.theoretical_content && v.experimental_validation;
  const int yes = int(v.domain_relevance) + int(v.theoretical_content) + int(v.experimental_validation);
  v.score = yes / 3.0;
  if (j.contains("score") && j["score"].is_number()) {
    const double s = j["score"].get<double>();
    if (s >= 0.0 && s <= 1.0) v.score = s;
  }
  return v;
}

}  // namespace detail

/// Stage-I screen over the head segment only. A reply that cannot be read
/// gets exactly one repair request; a second failure raises
/// Error(unparseable_verdict) so the caller can queue the document for
/// manual screening.
inline GateVerdict gatekeeper_screen(ProviderClient& client, const ingest::HeadSegment& head,
                                     std::optional<Clock::time_point> deadline = std::nullopt,
                                     const GateOptions& opt = {}) {
  if (head.text.empty()) throw std::invalid_argument("gatekeeper_screen: head text is empty");
  ProviderRequest req;
  req.model_tier = ModelTier::gatekeeper_tier;
  req.system_prompt = std::string(prompts::asset("gatekeeper_system.txt"));
  req.user_content = prompts::render(prompts::asset("gatekeeper_user.txt"), {{"doc_id", head.doc_id}, {"head", head.text}});
  req.max_output_tokens = opt.max_output_tokens;
  CallContext ctx{"gatekeeper", head.doc_id, 1, deadline};
  const ProviderResponse first = client.complete(req, ctx);
  try {
    return detail::parse_verdict(first.text);
  } catch (const std::runtime_error& e) {
    ProviderRequest repair = req;
    repair.user_content = req.user_content + "\n\n" +
                          prompts::render(prompts::asset("gatekeeper_repair.txt"),
                                          {{"previous", first.text}, {"error", e.what()}});
    ctx.attempt = 2;
    const ProviderResponse second = client.complete(repair, ctx);
    try {
      GateVerdict v = detail::parse_verdict(second.text);
      v.repaired = true;
      return v;
    } catch (const std::runtime_error& e2) {
      throw Error(errc::unparseable_verdict, head.doc_id + ": gatekeeper reply unusable after repair: " + e2.what());
    }
  }
}

}  // namespace cmdb::agent
