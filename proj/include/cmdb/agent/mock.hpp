#pragma once

// Scripted provider for tests and offline runs. A script is a JSON object
//
//   {"entries": [
//      {"stage": "gatekeeper", "doc_id": "doc01", "attempt": 1, "response": {...}},
//      {"stage": "analyst", "doc_id": "*", "text": "{\"records\": []}"},
//      {"stage": "analyst", "doc_id": "doc07", "transport_failures": 2, "text": "..."},
//      {"stage": "analyst", "doc_id": "doc09", "fail": "quota exceeded"}
//   ]}
//
// Lookup precedence for a call (stage, doc, attempt): exact attempt match,
// then an entry without "attempt", then the same two for doc_id "*".
// "response" may hold any JSON value and is sent as its compact dump.

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <tuple>

#include "cmdb/agent/provider.hpp"
#include "json.hpp"

namespace cmdb::agent {

class MockTransport : public Transport {
public:
  struct Entry {
    std::string text;
    int transport_failures = 0;
    std::optional<std::string> fail;  // final, non-retryable failure
    int delay_ms = 0;
  };

  MockTransport() = default;

  static std::shared_ptr<MockTransport> from_json(const nlohmann::json& script) {
    auto m = std::make_shared<MockTransport>();
    const nlohmann::json& entries = script.is_array() ? script : script.value("entries", nlohmann::json::array());
    if (!entries.is_array()) throw Error(errc::bad_provider_config, "mock script needs an 'entries' array");
    for (const auto& e : entries) {
      if (!e.is_object() || !e.contains("stage")) {
        throw Error(errc::bad_provider_config, "mock entry needs a 'stage': " + e.dump());
      }
      Entry en;
      if (e.contains("text")) {
        en.text = e["text"].get<std::string>();
      } else if (e.contains("response")) {
        en.text = e["response"].dump();
      }
      en.transport_failures = e.value("transport_failures", 0);
      if (e.contains("fail")) en.fail = e["fail"].is_string() ? e["fail"].get<std::string>() : std::string("scripted failure");
      en.delay_ms = e.value("delay_ms", 0);
      const int attempt = e.value("attempt", 0);
      m->add(e["stage"].get<std::string>(), e.value("doc_id", std::string("*")), attempt, std::move(en));
    }
    return m;
  }

  static std::shared_ptr<MockTransport> load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(errc::bad_provider_config, "cannot read mock script " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::bad_provider_config, "mock script " + path.string() + ": " + e.what());
    }
  }

  /// attempt 0 means "any attempt".
  void add(std::string stage, std::string doc_id, int attempt, Entry e) {
    std::lock_guard<std::mutex> lk(mu_);
    entries_[{std::move(stage), std::move(doc_id), attempt}] = std::move(e);
  }

  void add_text(std::string stage, std::string doc_id, int attempt, std::string text) {
    Entry e;
    e.text = std::move(text);
    add(std::move(stage), std::move(doc_id), attempt, std::move(e));
  }

  ProviderResponse send(const ProviderRequest& req, const CallContext& ctx) override {
    Entry e;
    Key key;
    int seen = 0;
    {
      std::lock_guard<std::mutex> lk(mu_);
      const Entry* found = nullptr;
      for (const auto& doc : {ctx.doc_id, std::string("*")}) {
        for (int att : {ctx.attempt, 0}) {
          auto it = entries_.find({ctx.stage, doc, att});
          if (it != entries_.end()) {
            found = &it->second;
            key = it->first;
            break;
          }
        }
        if (found) break;
      }
      if (!found) {
        throw Error(errc::provider_unavailable, "mock script has no entry for stage=" + ctx.stage +
                                                    " doc=" + ctx.doc_id + " attempt=" + std::to_string(ctx.attempt));
      }
      e = *found;
      // transport failures are counted per (key, call attempt)
      seen = transport_seen_[{std::get<0>(key), ctx.doc_id, ctx.attempt}]++;
    }
    if (e.delay_ms > 0) sleep_within(std::chrono::milliseconds(e.delay_ms), ctx);
    if (seen < e.transport_failures) {
      throw Error(errc::transport_error, "scripted transport failure " + std::to_string(seen + 1));
    }
    if (e.fail) throw Error(errc::provider_unavailable, *e.fail);
    ProviderResponse r;
    r.text = e.text;
    r.prompt_tokens = estimate_tokens(req.system_prompt) + estimate_tokens(req.user_content);
    r.completion_tokens = estimate_tokens(r.text);
    r.latency_ms = 0;
    return r;
  }

private:
  using Key = std::tuple<std::string, std::string, int>;
  std::mutex mu_;
  std::map<Key, Entry> entries_;
  std::map<Key, int> transport_seen_;
};

}  // namespace cmdb::agent
