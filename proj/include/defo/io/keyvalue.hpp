#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "defo/errors.hpp"

namespace defo::io {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct KeyValue {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

/// `key = value` lines, optional `[section]` headers, `#` comments.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(std::string_view text, const std::string& context) {
    KeyValueDoc doc;
    std::string section;
    std::istringstream in{std::string(text)};
    int lineno = 0;
    for (std::string raw; std::getline(in, raw);) {
      ++lineno;
      std::string line = trim(raw);
      if (line.empty() || line[0] == '#') continue;
      const std::string where = context + ":" + std::to_string(lineno);
      if (line.front() == '[') {
        if (line.back() != ']') throw config_error(where + ": malformed section header");
        section = trim(std::string_view(line).substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw config_error(where + ": expected 'key = value'");
      KeyValue kv{section, trim(std::string_view(line).substr(0, eq)),
                  trim(std::string_view(line).substr(eq + 1)), lineno};
      if (kv.key.empty()) throw config_error(where + ": empty key");
      if (doc.find(kv.section, kv.key)) {
        throw config_error(where + ": duplicate key '" + kv.key + "'");
      }
      doc.entries_.push_back(std::move(kv));
    }
    return doc;
  }

  const KeyValue* find(std::string_view section, std::string_view key) const {
    for (const auto& e : entries_)
      if (e.section == section && e.key == key) return &e;
    return nullptr;
  }

  std::optional<std::string> get(std::string_view key, std::string_view section = "") const {
    if (auto* e = find(section, key)) return e->value;
    return std::nullopt;
  }

  std::string require(std::string_view key, const std::string& context,
                      std::string_view section = "") const {
    if (auto v = get(key, section)) return *v;
    throw format_error(context + ": missing key '" + std::string(key) + "'");
  }

  const std::vector<KeyValue>& entries() const { return entries_; }

  void set(std::string section, std::string key, std::string value) {
    entries_.push_back({std::move(section), std::move(key), std::move(value), 0});
  }

  std::string str() const {
    std::ostringstream out;
    std::string section;
    for (const auto& e : entries_) {
      if (e.section != section) {
        section = e.section;
        out << '[' << section << "]\n";
      }
      out << e.key << " = " << e.value << '\n';
    }
    return out.str();
  }

 private:
  std::vector<KeyValue> entries_;
};

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<bool> parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  return std::nullopt;
}

/// FNV-1a, 64 bit, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace defo::io
