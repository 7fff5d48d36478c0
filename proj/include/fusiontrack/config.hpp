#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fusiontrack {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `key = value` lines; `#` starts a comment. Duplicate keys are rejected.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in);
  static KeyValues parse_file(const std::string& path);

  bool contains(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get(const std::string& key, const std::string& fallback) const;
  std::optional<std::string> find(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated integers.
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Keys never read by any getter; used to reject typos.
  std::vector<std::string> unused() const;

  /// Sorted `key=value` lines; stable input for hashing.
  std::string canonical() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> read_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& text);

}  // namespace fusiontrack
