#include "fcdd/config.hpp"

#include <fstream>

namespace fcdd {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void insert_entry(std::map<std::string, std::string>& values,
                  const std::set<std::string>& known, const std::string& key,
                  const std::string& value, const std::string& where) {
  if (key.empty()) throw ConfigError("empty config key in " + where);
  if (!known.count(key))
    throw ConfigError("unknown config key '" + key + "' in " + where);
  values[key] = value;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path,
                               const std::set<std::string>& known_keys,
                               const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value' at " + path + ":" +
                        std::to_string(line_no));
    insert_entry(cfg.values_, known_keys, trim(line.substr(0, eq)),
                 trim(line.substr(eq + 1)), path);
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + ov + "'");
    insert_entry(cfg.values_, known_keys, trim(ov.substr(0, eq)),
                 trim(ov.substr(eq + 1)), "--set override");
  }
  return cfg;
}

RunConfig RunConfig::from_overrides(const std::set<std::string>& known_keys,
                                    const std::vector<std::string>& overrides) {
  RunConfig cfg;
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + ov + "'");
    insert_entry(cfg.values_, known_keys, trim(ov.substr(0, eq)),
                 trim(ov.substr(eq + 1)), "--set override");
  }
  return cfg;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("missing required config key '" + key + "'");
  return it->second;
}

std::string RunConfig::get_or(const std::string& key,
                              const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long RunConfig::get_long(const std::string& key, long fallback) const {
  if (!has(key)) return fallback;
  try {
    return std::stol(get(key));
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer");
  }
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number");
  }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean");
}

}  // namespace fcdd
