#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ss3d {

/// Flat `key = value` text config. Blank lines and lines starting with '#'
/// are ignored. Getters record which keys were read so leftovers can be rejected.
class KeyValueConfig {
 public:
  /// Throws E_CONFIG on a malformed line or duplicate key.
  static KeyValueConfig parse(std::istream& in);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated numbers.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  /// Throws E_CONFIG naming the first key never read.
  void check_all_used() const;
  void write(std::ostream& out) const;
  void save(const std::string& path) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace ss3d
