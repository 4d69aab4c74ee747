#pragma once

#include <chrono>
#include <string>

#include "cmdb/agent/provider.hpp"
#include "httplib.h"
#include "json.hpp"

namespace cmdb::agent {

struct HttpProviderConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string api_key;
  std::string gatekeeper_model;
  std::string analyst_model;
  std::chrono::seconds timeout{120};
};

/// Chat-completion style endpoint: POST {base}/chat/completions with
/// {model, messages, temperature, max_tokens}.
class HttpTransport : public Transport {
public:
  explicit HttpTransport(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.base_url.empty()) throw Error(errc::bad_provider_config, "CM_PROVIDER_URL is not set");
    if (cfg_.gatekeeper_model.empty() || cfg_.analyst_model.empty()) {
      throw Error(errc::bad_provider_config, "CM_GATEKEEPER_MODEL and CM_ANALYST_MODEL must both be set");
    }
    const auto scheme_end = cfg_.base_url.find("://");
    if (scheme_end == std::string::npos) throw Error(errc::bad_provider_config, "provider URL needs a scheme");
    const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
    origin_ = cfg_.base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? std::string() : cfg_.base_url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    if (path_.size() < 17 || path_.compare(path_.size() - 17, 17, "/chat/completions") != 0) {
      path_ += "/chat/completions";
    }
  }

  ProviderResponse send(const ProviderRequest& req, const CallContext& ctx) override {
    httplib::Client cli(origin_);
    auto timeout = cfg_.timeout;
    if (ctx.deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::seconds>(*ctx.deadline - Clock::now());
      timeout = std::max(std::chrono::seconds(1), std::min(timeout, left));
    }
    cli.set_connection_timeout(std::min<std::chrono::seconds>(timeout, std::chrono::seconds(30)));
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    nlohmann::json body = {
        {"model", req.model_tier == ModelTier::gatekeeper_tier ? cfg_.gatekeeper_model : cfg_.analyst_model},
        {"messages", nlohmann::json::array({{{"role", "system"}, {"content", req.system_prompt}},
                                            {{"role", "user"}, {"content", req.user_content}}})},
        {"temperature", req.temperature},
        {"max_tokens", req.max_output_tokens}};
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    const auto start = Clock::now();
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
    if (!res) {
      throw Error(errc::transport_error, "HTTP request failed: " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
      throw Error(errc::transport_error, "HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
      throw Error(errc::provider_unavailable, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300));
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(res->body);
      ProviderResponse out;
      out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      if (j.contains("usage")) {
        out.prompt_tokens = j["usage"].value("prompt_tokens", 0);
        out.completion_tokens = j["usage"].value("completion_tokens", 0);
      } else {
        out.prompt_tokens = estimate_tokens(req.system_prompt) + estimate_tokens(req.user_content);
        out.completion_tokens = estimate_tokens(out.text);
      }
      out.latency_ms = latency;
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::provider_unavailable, std::string("malformed provider response: ") + e.what());
    }
  }

private:
  HttpProviderConfig cfg_;
  std::string origin_;
  std::string path_;
};

}  // namespace cmdb::agent
