#pragma once

// Strict parser for the YAML subset the run-spec format uses: scalar
// `key: value` lines, inline lists `key: [a, b, c]`, and nesting through
// indented blocks. Anything else is rejected with a line number.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cloudmask {

class YamlDoc {
 public:
  bool has(const std::string& key) const;
  bool has_list(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<std::uint64_t> get_u64_list(const std::string& key) const;

  std::string get_string_or(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  double get_double_or(const std::string& key, double fallback) const;

  // Every dotted key present, scalars and lists alike (for strict schemas).
  std::vector<std::string> keys() const;

  std::map<std::string, std::string> scalars;
  std::map<std::string, std::vector<std::string>> lists;
  std::string origin;
};

YamlDoc parse_yamlish(const std::string& text, const std::string& origin);

}  // namespace cloudmask
