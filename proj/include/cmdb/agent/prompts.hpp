#pragma once

#include <map>
#include <string>
#include <string_view>

#include "cmdb/error.hpp"
#include "cmdb/prompt_assets.hpp"
#include "cmdb/util/text.hpp"

namespace cmdb::prompts {

inline std::string_view asset(const std::string& name) {
  const auto& all = assets::all();
  auto it = all.find(name);
  if (it == all.end()) throw Error(errc::bad_config, "missing prompt asset " + name);
  return it->second;
}

inline std::string version() { return text::trim(asset("VERSION")); }

/// Replaces {{key}} placeholders. Values are inserted verbatim and are not
/// rescanned, so document text containing braces is safe.
inline std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const auto open = tmpl.find("{{", i);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    const std::string key(tmpl.substr(open + 2, close - open - 2));
    auto it = vars.find(key);
    out.append(tmpl.substr(i, open - i));
    if (it != vars.end()) {
      out += it->second;
    } else {
      out.append(tmpl.substr(open, close + 2 - open));
    }
    i = close + 2;
  }
  return out;
}

}  // namespace cmdb::prompts
