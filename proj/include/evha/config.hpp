#pragma once
// Layered pipeline configuration: built-in defaults, then a `key = value`
// file ('#' starts a comment), then command-line overrides. Every key has a
// documented range; unknown keys and out-of-range values are rejected.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evha/error.hpp"

namespace evha::config {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct KeyInfo {
  std::string name;
  std::string default_value;
  std::string help;
};

// All known keys with defaults, sorted by name.
const std::vector<KeyInfo>& known_keys();

class Config {
 public:
  Config();  // defaults

  // Applies `key = value` lines; `origin` prefixes error messages.
  void apply_text(std::string_view text, const std::string& origin = "config");
  void apply_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::string& raw(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  // "auto" yields nullopt.
  std::optional<double> get_auto_double(const std::string& key) const;

  // Canonical snapshot: one `key = value` line per key, sorted.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace evha::config
