#pragma once

// Strict JSON config reading: every violation is collected, and unknown keys
// are violations too, so a single run reports everything that is wrong.

#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "carbrec/error.hpp"

namespace carbrec {

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string where, std::vector<std::string>& errors)
      : j_(j), where_(std::move(where)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where_ + ": expected an object");
  }

  /// Reads `key` into `out` when present; `required` makes absence a violation.
  template <class T>
  bool get(const std::string& key, T& out, bool required = false) {
    known_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) {
      if (required) errors_.push_back(path(key) + ": required");
      return false;
    }
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      // json converts -1 to a huge unsigned value without complaint
      const auto& v = j_.at(key);
      if (v.is_number_integer() && !v.is_number_unsigned() && v.template get<long long>() < 0) {
        errors_.push_back(path(key) + ": must be non-negative");
        return false;
      }
    }
    try {
      out = j_.at(key).get<T>();
      return true;
    } catch (const nlohmann::json::exception&) {
      errors_.push_back(path(key) + ": wrong type (" + std::string(j_.at(key).type_name()) + ")");
      return false;
    }
  }

  template <class T, class Pred>
  void check(const std::string& key, const T& value, Pred ok, const std::string& rule) {
    if (!ok(value)) errors_.push_back(path(key) + ": " + rule);
  }

  /// A nested object; unknown keys inside it are reported by its own finish().
  const nlohmann::json* child(const std::string& key) {
    known_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!known_.contains(k)) errors_.push_back(path(k) + ": unknown key");
    }
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::vector<std::string>& errors_;
  std::set<std::string> known_;
};

/// Throws ConfigError listing every violation, one per line.
inline void throw_if_errors(const std::vector<std::string>& errors, const std::string& what) {
  if (errors.empty()) return;
  std::string msg = what + ": " + std::to_string(errors.size()) + " violation(s)";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

}  // namespace carbrec
