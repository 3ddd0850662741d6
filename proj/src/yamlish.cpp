#include "cloudmask/yamlish.hpp"

#include <cctype>
#include <cstdlib>
#include <sstream>

#include "cloudmask/errors.hpp"

namespace cloudmask {

namespace {

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw FormatError(origin + ":" + std::to_string(line) + ": " + msg);
}

std::string strip(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

// Comments start at '#' when it opens the content or follows whitespace.
std::string strip_comment(const std::string& s) {
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '#' && (i == 0 || std::isspace(static_cast<unsigned char>(s[i - 1])))) {
      return s.substr(0, i);
    }
  }
  return s;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  }
  return true;
}

}  // namespace

YamlDoc parse_yamlish(const std::string& text, const std::string& origin) {
  YamlDoc doc;
  doc.origin = origin;

  struct Level {
    std::string prefix;
    int indent;
  };
  std::vector<Level> stack{{"", 0}};
  bool pending_open = false;
  std::string pending_prefix;
  int pending_indent = -1;

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string no_comment = strip_comment(raw);
    if (strip(no_comment).empty()) continue;

    int indent = 0;
    while (indent < static_cast<int>(no_comment.size()) && no_comment[static_cast<size_t>(indent)] == ' ') ++indent;
    if (indent < static_cast<int>(no_comment.size()) && no_comment[static_cast<size_t>(indent)] == '\t') {
      fail(origin, lineno, "tabs are not allowed for indentation");
    }
    const std::string content = strip(no_comment);

    if (pending_open) {
      if (indent > pending_indent) {
        stack.push_back({pending_prefix, indent});
        pending_open = false;
      } else {
        fail(origin, lineno, "section '" + pending_prefix + "' has no indented content");
      }
    }
    while (stack.size() > 1 && indent < stack.back().indent) stack.pop_back();
    if (indent != stack.back().indent) {
      fail(origin, lineno, "indentation does not match any open block");
    }

    const size_t colon = content.find(':');
    if (colon == std::string::npos) fail(origin, lineno, "expected 'key: value'");
    const std::string key = strip(content.substr(0, colon));
    if (!valid_key(key)) fail(origin, lineno, "invalid key '" + key + "'");
    const std::string full = stack.back().prefix.empty() ? key : stack.back().prefix + "." + key;
    if (doc.scalars.count(full) || doc.lists.count(full)) {
      fail(origin, lineno, "duplicate key '" + full + "'");
    }
    const std::string value = strip(content.substr(colon + 1));

    if (value.empty()) {
      pending_open = true;
      pending_prefix = full;
      pending_indent = indent;
      continue;
    }
    if (value.front() == '[') {
      if (value.back() != ']') fail(origin, lineno, "unterminated list for '" + full + "'");
      std::vector<std::string> items;
      std::string body = value.substr(1, value.size() - 2);
      std::istringstream parts(body);
      std::string item;
      while (std::getline(parts, item, ',')) {
        const std::string v = unquote(strip(item));
        if (v.empty()) fail(origin, lineno, "empty list item for '" + full + "'");
        items.push_back(v);
      }
      doc.lists[full] = std::move(items);
      continue;
    }
    doc.scalars[full] = unquote(value);
  }
  if (pending_open) {
    fail(origin, lineno + 1, "section '" + pending_prefix + "' has no indented content");
  }
  return doc;
}

bool YamlDoc::has(const std::string& key) const { return scalars.count(key) > 0; }
bool YamlDoc::has_list(const std::string& key) const { return lists.count(key) > 0; }

std::string YamlDoc::get_string(const std::string& key) const {
  auto it = scalars.find(key);
  if (it == scalars.end()) throw FormatError(origin + ": missing required key '" + key + "'");
  return it->second;
}

namespace {

std::int64_t to_int(const std::string& origin, const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const long long parsed = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0') {
    throw FormatError(origin + ": key '" + key + "' has non-integer value '" + v + "'");
  }
  return parsed;
}

double to_double(const std::string& origin, const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double parsed = std::strtod(v.c_str(), &end);
  if (errno != 0 || end == v.c_str() || *end != '\0') {
    throw FormatError(origin + ": key '" + key + "' has non-numeric value '" + v + "'");
  }
  return parsed;
}

}  // namespace

std::int64_t YamlDoc::get_int(const std::string& key) const { return to_int(origin, key, get_string(key)); }

double YamlDoc::get_double(const std::string& key) const { return to_double(origin, key, get_string(key)); }

std::vector<std::string> YamlDoc::get_list(const std::string& key) const {
  auto it = lists.find(key);
  if (it == lists.end()) throw FormatError(origin + ": missing required list '" + key + "'");
  return it->second;
}

std::vector<std::uint64_t> YamlDoc::get_u64_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const std::string& v : get_list(key)) {
    const std::int64_t parsed = to_int(origin, key, v);
    if (parsed < 0) throw FormatError(origin + ": key '" + key + "' holds negative value " + v);
    out.push_back(static_cast<std::uint64_t>(parsed));
  }
  return out;
}

std::string YamlDoc::get_string_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

std::int64_t YamlDoc::get_int_or(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double YamlDoc::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::vector<std::string> YamlDoc::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : scalars) out.push_back(k);
  for (const auto& [k, v] : lists) out.push_back(k);
  return out;
}

}  // namespace cloudmask
