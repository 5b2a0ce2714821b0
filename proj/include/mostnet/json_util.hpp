#pragma once

#include <json.hpp>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mostnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws ConfigError when `obj` is not an object or holds a key outside `allowed`.
inline void reject_unknown_keys(const nlohmann::json& obj, std::string_view section,
                                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
  }
}

/// Assigns obj[key] to `out` when present, with a typed error message.
template <typename T>
void read_optional(const nlohmann::json& obj, const char* key, T& out, std::string_view section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

}  // namespace mostnet
