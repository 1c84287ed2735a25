#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace geoloc {

// Flat key=value run configuration. Keys come from a fixed schema; unknown
// keys are rejected with the offending line number. Every command writes the
// fully resolved configuration (defaults materialized) next to its outputs.
class RunConfig {
 public:
  static RunConfig defaults();
  static RunConfig from_file(const std::string& path);

  // Throws ConfigError for unknown keys or (on typed access) bad values.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  void write_resolved(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace geoloc
