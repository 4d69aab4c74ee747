#pragma once

namespace cmdb {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cmdb
