#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "fcdd/errors.hpp"

namespace fcdd {

// Flat `key = value` run configuration. Unknown keys are rejected before any
// computation; `--set key=value` overrides are applied on top of the file.
class RunConfig {
 public:
  static RunConfig from_file(const std::string& path,
                             const std::set<std::string>& known_keys,
                             const std::vector<std::string>& overrides = {});
  static RunConfig from_overrides(const std::set<std::string>& known_keys,
                                  const std::vector<std::string>& overrides);

  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;  // throws if absent
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long get_long(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fcdd
