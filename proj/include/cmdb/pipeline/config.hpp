#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "cmdb/agent/provider.hpp"
#include "cmdb/error.hpp"
#include "cmdb/util/text.hpp"

namespace cmdb::pipeline {

/// Flat key/value settings. Layers merge as flags > environment > file.
using Settings = std::map<std::string, std::string>;

inline const std::set<std::string>& known_setting_keys() {
  static const std::set<std::string> keys{
      "limit_chars",   "correction_budget", "workers",     "doc_timeout_s",  "context_chars",   "max_retries",
      "backoff_ms",    "max_in_flight",     "gatekeeper_rps", "analyst_rps", "provider",        "provider_url",
      "api_key",       "gatekeeper_model",  "analyst_model", "db_path",      "work_dir",        "listen_addr",
      "api_token",     "upload_limit_mb",   "plausibility", "upload_dir"};
  return keys;
}

/// Parses `key = value` lines. '#' starts a comment, [section] headers are
/// accepted and ignored, values may be double-quoted.
inline Settings parse_settings(std::string_view text, const std::string& origin = "config") {
  Settings out;
  std::istringstream in{std::string(text)};
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    std::string s = line;
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) {
        s.resize(i);
        break;
      }
    }
    s = text::trim(s);
    if (s.empty() || (s.front() == '[' && s.back() == ']')) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw Error(errc::bad_config, origin + ":" + std::to_string(n) + ": expected key = value");
    }
    std::string key = text::trim(s.substr(0, eq));
    std::string value = text::trim(s.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!known_setting_keys().count(key)) {
      throw Error(errc::bad_config, origin + ":" + std::to_string(n) + ": unknown key '" + key + "'");
    }
    out[key] = value;
  }
  return out;
}

inline Settings load_settings_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::bad_config, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_settings(ss.str(), path.string());
}

inline Settings settings_from_env() {
  Settings out;
  const std::pair<const char*, const char*> vars[] = {
      {"CM_PROVIDER", "provider"},     {"CM_PROVIDER_URL", "provider_url"},         {"CM_API_KEY", "api_key"},
      {"CM_GATEKEEPER_MODEL", "gatekeeper_model"}, {"CM_ANALYST_MODEL", "analyst_model"}, {"CM_DB_PATH", "db_path"},
      {"CM_LISTEN_ADDR", "listen_addr"}, {"CM_API_TOKEN", "api_token"}};
  for (auto [env, key] : vars) {
    if (const char* v = std::getenv(env); v && *v) out[key] = v;
  }
  return out;
}

/// Later layers win.
inline Settings merge_settings(std::initializer_list<Settings> layers) {
  Settings out;
  for (const auto& l : layers) {
    for (const auto& [k, v] : l) out[k] = v;
  }
  return out;
}

inline std::string setting(const Settings& s, const std::string& key, std::string def = {}) {
  auto it = s.find(key);
  return it == s.end() ? def : it->second;
}

inline long long setting_int(const Settings& s, const std::string& key, long long def, long long lo, long long hi) {
  auto it = s.find(key);
  if (it == s.end()) return def;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size() || v < lo || v > hi) throw std::out_of_range(key);
    return v;
  } catch (const std::exception&) {
    throw Error(errc::bad_config, key + " must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                      "], got '" + it->second + "'");
  }
}

inline double setting_real(const Settings& s, const std::string& key, double def, double lo, double hi) {
  auto it = s.find(key);
  if (it == s.end()) return def;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size() || !(v >= lo && v <= hi)) throw std::out_of_range(key);
    return v;
  } catch (const std::exception&) {
    throw Error(errc::bad_config, key + " must be a number in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                      "], got '" + it->second + "'");
  }
}

inline agent::ClientOptions client_options_from(const Settings& s) {
  agent::ClientOptions o;
  o.max_retries = static_cast<int>(setting_int(s, "max_retries", o.max_retries, 0, 20));
  o.backoff = std::chrono::milliseconds(setting_int(s, "backoff_ms", o.backoff.count(), 0, 600000));
  o.max_in_flight = static_cast<int>(setting_int(s, "max_in_flight", o.max_in_flight, 1, 256));
  o.gatekeeper_rps = setting_real(s, "gatekeeper_rps", o.gatekeeper_rps, 0, 1e6);
  o.analyst_rps = setting_real(s, "analyst_rps", o.analyst_rps, 0, 1e6);
  return o;
}

}  // namespace cmdb::pipeline
