#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "noduleclip/common/error.hpp"

namespace noduleclip {

// Throws ValidationError naming the first key of `j` outside `allowed`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                               const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError(where + ": unknown key '" + key + "'");
    }
  }
}

// Reads j[key] into `out` when present; type errors name the key.
template <class T>
void read_optional(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + "." + key + ": wrong type");
  }
}

}  // namespace noduleclip
