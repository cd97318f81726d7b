#pragma once

// Flat `key = value` configuration files with `#` comments.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace protograde {

class KeyValueConfig {
 public:
  /// Throws ConfigError on malformed lines or duplicate keys.
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set_default(const std::string& key, std::string value);
  void erase(const std::string& key) { values_.erase(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<long long> get_int_list(const std::string& key) const;

  /// Throws ConfigError naming the first key outside `allowed`.
  void reject_unknown(const std::set<std::string>& allowed) const;

  /// Canonical text: sorted `key = value` lines.
  std::string to_text() const;
  /// FNV-1a 64 of to_text(), rendered as 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t value);

/// Parses a number, accepting `a/b` fractions and `inf`. Throws ConfigError.
double parse_number(const std::string& text, const std::string& what);

std::string format_double(double value);

}  // namespace protograde
