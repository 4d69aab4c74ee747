#pragma once

#include <string>
#include <string_view>

#include "cmdb/util/text.hpp"
#include "json.hpp"

namespace cmdb::agent {

/// Strips a surrounding ``` fence (with or without a language tag) and any
/// prose around the outermost JSON value.
inline std::string strip_code_fences(std::string_view reply) {
  std::string s = text::trim(reply);
  if (s.rfind("```", 0) == 0) {
    const auto nl = s.find('\n');
    s = nl == std::string::npos ? std::string() : s.substr(nl + 1);
    const auto end = s.rfind("```");
    if (end != std::string::npos) s = s.substr(0, end);
    s = text::trim(s);
  }
  const auto first = s.find_first_of("{[");
  if (first == std::string::npos) return s;
  const char closer = s[first] == '{' ? '}' : ']';
  const auto last = s.rfind(closer);
  if (last == std::string::npos || last < first) return s;
  return s.substr(first, last - first + 1);
}

/// Parses a model reply as JSON; throws nlohmann::json::parse_error.
inline nlohmann::json parse_reply(std::string_view reply) { return nlohmann::json::parse(strip_code_fences(reply)); }

}  // namespace cmdb::agent
