#pragma once

#include <cstdlib>
#include <map>
#include <memory>
#include <string>

#include "cmdb/agent/http_transport.hpp"
#include "cmdb/agent/mock.hpp"
#include "cmdb/agent/provider.hpp"

namespace cmdb::agent {

/// Provider selection. `spec` is "mock:<script.json>" or "http"; the http
/// transport reads its endpoint, key and model names from `settings`
/// (keys provider_url, api_key, gatekeeper_model, analyst_model).
inline std::shared_ptr<Transport> make_transport(const std::string& spec,
                                                 const std::map<std::string, std::string>& settings) {
  if (spec.rfind("mock:", 0) == 0) {
    const std::string path = spec.substr(5);
    if (path.empty()) throw Error(errc::bad_provider_config, "mock provider needs a script path: mock:<file>");
    return MockTransport::load(path);
  }
  if (spec == "http" || spec.empty()) {
    auto get = [&](const char* k) {
      auto it = settings.find(k);
      return it == settings.end() ? std::string() : it->second;
    };
    if (spec.empty() && get("provider_url").empty()) {
      throw Error(errc::bad_provider_config, "no provider configured: set CM_PROVIDER=mock:<script> or CM_PROVIDER_URL");
    }
    HttpProviderConfig cfg;
    cfg.base_url = get("provider_url");
    cfg.api_key = get("api_key");
    cfg.gatekeeper_model = get("gatekeeper_model");
    cfg.analyst_model = get("analyst_model");
    return std::make_shared<HttpTransport>(cfg);
  }
  throw Error(errc::bad_provider_config, "unknown provider '" + spec + "' (expected mock:<file> or http)");
}

/// Provider settings from CM_PROVIDER, CM_PROVIDER_URL, CM_API_KEY,
/// CM_GATEKEEPER_MODEL and CM_ANALYST_MODEL.
inline std::map<std::string, std::string> provider_settings_from_env() {
  std::map<std::string, std::string> out;
  const std::pair<const char*, const char*> vars[] = {{"CM_PROVIDER", "provider"},
                                                      {"CM_PROVIDER_URL", "provider_url"},
                                                      {"CM_API_KEY", "api_key"},
                                                      {"CM_GATEKEEPER_MODEL", "gatekeeper_model"},
                                                      {"CM_ANALYST_MODEL", "analyst_model"}};
  for (auto [env, key] : vars) {
    if (const char* v = std::getenv(env); v && *v) out[key] = v;
  }
  return out;
}

}  // namespace cmdb::agent
