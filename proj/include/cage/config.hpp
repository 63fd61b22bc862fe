// Copyright 2026 The CAGE-QAT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include "cage/numerics.hpp"

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace cage {

class ConfigError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

/// Flat `key = value` settings for one subcommand. The key set is fixed by
/// the defaults; anything else is rejected.
class ExperimentConfig {
 public:
  ExperimentConfig(std::string subcommand, std::map<std::string, std::string> defaults)
      : subcommand_(std::move(subcommand)), values_(std::move(defaults)) {}

  const std::string& subcommand() const noexcept { return subcommand_; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "' for " + subcommand_);
    it->second = value;
  }

  /// Lines `key = value`; blank lines and `#` comments ignored.
  void load(std::istream& is, const std::string& origin = "<config>") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    load(in, path);
  }

  void write_snapshot(std::ostream& os) const {
    os << "# " << subcommand_ << '\n';
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key) const { return parse_double(key, get(key)); }

  std::size_t get_size(const std::string& key) const { return parse_size(key, get(key)); }

  bool get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(parse_double(key, s));
    return out;
  }

  std::vector<std::size_t> get_size_list(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& s : get_list(key)) out.push_back(parse_size(key, s));
    return out;
  }

  /// Seeds accept single values and inclusive ranges: "0-9" or "1,4,7".
  std::vector<std::uint64_t> get_seed_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const auto& s : get_list(key)) {
      const auto dash = s.find('-');
      if (dash != std::string::npos && dash > 0) {
        const auto lo = parse_size(key, s.substr(0, dash));
        const auto hi = parse_size(key, s.substr(dash + 1));
        if (hi < lo) throw ConfigError("config key '" + key + "': empty seed range '" + s + "'");
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
      } else {
        out.push_back(parse_size(key, s));
      }
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': need at least one seed");
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double parse_double(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  }

  static std::size_t parse_size(const std::string& key, const std::string& s) {
    // Accept "1e5"-style integers too.
    const double v = parse_double(key, s);
    if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v)))
      throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
    return static_cast<std::size_t>(v);
  }

  std::string subcommand_;
  std::map<std::string, std::string> values_;
};

}  // namespace cage
