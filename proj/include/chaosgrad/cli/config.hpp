#pragma once

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "chaosgrad/core/error.hpp"

// Flat key-value experiment configs:
//
//   # comment
//   experiment = figure1
//   system.name = sinusoid
//   sweep.w = [1, 2, 4, 8]
//   sweep.theta = linspace(-10, 10, 201)
//   estimator.antithetic = true
//
// Keys are dotted identifiers, each may appear once. Values are scalars
// (number, bool, bare or quoted string) or bracketed lists of scalars;
// linspace(a, b, n) expands to an explicit n-point list. Every key must be
// read by the experiment, otherwise finish() rejects the config.

namespace chaosgrad::cli {

class Config {
 public:
  struct Entry {
    std::vector<std::string> items;  // one item for scalars
    bool is_list = false;
    int line = 0;
  };

  static Config parse(std::string_view text, std::string source = "<config>") {
    Config cfg;
    cfg.source_ = std::move(source);
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const std::string line = trim(strip_comment(raw));
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) cfg.fail(line_no, "expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (!valid_key(key)) cfg.fail(line_no, "invalid key '" + key + "'");
      if (value.empty()) cfg.fail(line_no, "missing value for '" + key + "'");
      if (cfg.entries_.count(key)) cfg.fail(line_no, "duplicate key '" + key + "'");
      cfg.entries_[key] = cfg.parse_value(value, line_no);
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  /// Inserts or replaces a value as if it had appeared in the file.
  void set(const std::string& key, const std::string& value) {
    entries_[key] = parse_value(value, 0);
  }

  std::string get_string(const std::string& key, std::optional<std::string> fallback = {}) {
    const Entry* e = scalar(key, fallback.has_value());
    return e ? e->items[0] : *fallback;
  }

  double get_double(const std::string& key, std::optional<double> fallback = {}) {
    const Entry* e = scalar(key, fallback.has_value());
    return e ? to_double(key, e->items[0]) : *fallback;
  }

  std::uint64_t get_u64(const std::string& key, std::optional<std::uint64_t> fallback = {}) {
    const Entry* e = scalar(key, fallback.has_value());
    return e ? to_u64(key, e->items[0]) : *fallback;
  }

  std::size_t get_size(const std::string& key, std::optional<std::size_t> fallback = {}) {
    return static_cast<std::size_t>(get_u64(key, fallback));
  }

  bool get_bool(const std::string& key, std::optional<bool> fallback = {}) {
    const Entry* e = scalar(key, fallback.has_value());
    if (!e) return *fallback;
    const std::string& v = e->items[0];
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(where(key) + ": expected true or false, got '" + v + "'");
  }

  std::vector<double> get_doubles(const std::string& key,
                                  std::optional<std::vector<double>> fallback = {}) {
    const Entry* e = find(key, fallback.has_value());
    if (!e) return *fallback;
    std::vector<double> out;
    for (const auto& s : e->items) out.push_back(to_double(key, s));
    return out;
  }

  std::vector<std::size_t> get_sizes(const std::string& key,
                                     std::optional<std::vector<std::size_t>> fallback = {}) {
    const Entry* e = find(key, fallback.has_value());
    if (!e) return *fallback;
    std::vector<std::size_t> out;
    for (const auto& s : e->items) out.push_back(static_cast<std::size_t>(to_u64(key, s)));
    return out;
  }

  std::vector<std::string> get_strings(const std::string& key,
                                       std::optional<std::vector<std::string>> fallback = {}) {
    const Entry* e = find(key, fallback.has_value());
    return e ? e->items : *fallback;
  }

  /// Throws ConfigError naming every key that was never read.
  void finish() const {
    std::string unknown;
    for (const auto& [key, entry] : entries_) {
      if (!consumed_.count(key)) {
        unknown += (unknown.empty() ? "" : ", ") + key + " (line " + std::to_string(entry.line) + ")";
      }
    }
    if (!unknown.empty()) throw ConfigError(source_ + ": unknown keys: " + unknown);
  }

  /// FNV-1a over the canonical "key=item,item\n" rendering, sorted by key.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::string_view s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [key, entry] : entries_) {
      feed(key);
      feed(entry.is_list ? "=[" : "=");
      for (std::size_t i = 0; i < entry.items.size(); ++i) {
        if (i) feed(",");
        feed(entry.items[i]);
      }
      feed(entry.is_list ? "]\n" : "\n");
    }
    return h;
  }

  const std::string& source() const noexcept { return source_; }
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
  std::set<std::string> consumed_;
  std::string source_;

  [[noreturn]] void fail(int line, const std::string& what) const {
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + what);
  }

  std::string where(const std::string& key) const {
    auto it = entries_.find(key);
    const int line = it == entries_.end() ? 0 : it->second.line;
    return source_ + ":" + std::to_string(line) + ": '" + key + "'";
  }

  const Entry* find(const std::string& key, bool optional) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      if (optional) return nullptr;
      throw ConfigError(source_ + ": missing required key '" + key + "'");
    }
    consumed_.insert(key);
    return &it->second;
  }

  const Entry* scalar(const std::string& key, bool optional) {
    const Entry* e = find(key, optional);
    if (e && e->is_list) throw ConfigError(where(key) + ": expected a single value, got a list");
    return e;
  }

  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  }

  static bool valid_key(const std::string& key) {
    if (key.empty() || key.front() == '.' || key.back() == '.') return false;
    char prev = 0;
    for (char c : key) {
      const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
      if (!ok || (c == '.' && prev == '.')) return false;
      prev = c;
    }
    return true;
  }

  std::string unquote(const std::string& item, int line) const {
    if (item.size() >= 2 && item.front() == '"' && item.back() == '"') {
      return item.substr(1, item.size() - 2);
    }
    if (item.find('"') != std::string::npos) fail(line, "unbalanced quotes in '" + item + "'");
    return item;
  }

  Entry parse_value(const std::string& value, int line) const {
    Entry e;
    e.line = line;
    if (value.rfind("linspace(", 0) == 0) {
      if (value.back() != ')') fail(line, "malformed linspace");
      const auto args = split(value.substr(9, value.size() - 10), line);
      if (args.size() != 3) fail(line, "linspace takes (start, stop, count)");
      const double a = to_double("linspace", args[0]);
      const double b = to_double("linspace", args[1]);
      const auto n = to_u64("linspace", args[2]);
      if (n < 1) fail(line, "linspace count must be positive");
      e.is_list = true;
      for (std::uint64_t i = 0; i < n; ++i) {
        const double x = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
        e.items.push_back(format_number(i + 1 == n ? b : x));
      }
      return e;
    }
    if (value.front() == '[') {
      if (value.back() != ']') fail(line, "unterminated list");
      e.is_list = true;
      const std::string body = trim(value.substr(1, value.size() - 2));
      if (!body.empty()) e.items = split(body, line);
      return e;
    }
    e.items.push_back(unquote(value, line));
    return e;
  }

  std::vector<std::string> split(const std::string& body, int line) const {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : body) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        out.push_back(unquote(trim(cur), line));
        cur.clear();
      } else {
        cur += c;
      }
    }
    out.push_back(unquote(trim(cur), line));
    for (const auto& s : out) {
      if (s.empty()) fail(line, "empty list element");
    }
    return out;
  }

  static std::string format_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
  }

  double to_double(const std::string& key, const std::string& s) const {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
      throw ConfigError(where(key) + ": expected a finite number, got '" + s + "'");
    }
    return v;
  }

  std::uint64_t to_u64(const std::string& key, const std::string& s) const {
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s[0] == '-' || end != s.c_str() + s.size() || errno == ERANGE) {
      // Accept integral values written in floating notation, e.g. 1e6.
      const double d = to_double(key, s);
      if (d < 0.0 || d != std::floor(d) || d > 1.8e19) {
        throw ConfigError(where(key) + ": expected a non-negative integer, got '" + s + "'");
      }
      return static_cast<std::uint64_t>(d);
    }
    return v;
  }
};

}  // namespace chaosgrad::cli
