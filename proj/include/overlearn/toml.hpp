#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "overlearn/csv.hpp"
#include "overlearn/error.hpp"

namespace overlearn {

// Flat sectioned key-value config files, TOML-flavored:
//   [section] / [section.sub] headers, key = value lines, # comments.
// Values: true/false, numbers, "strings", and homogeneous arrays of
// numbers or strings. That subset covers every experiment config knob.

struct TomlValue {
  enum class Kind { boolean, number, string, number_array, string_array };
  Kind kind = Kind::number;
  bool b = false;
  double num = 0.0;
  std::string str;
  std::vector<double> nums;
  std::vector<std::string> strs;
};

class TomlDoc {
 public:
  static TomlDoc parse(const std::string& text, const std::string& origin = "<string>") {
    TomlDoc doc;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string ctx = origin + ":" + std::to_string(lineno);
      std::string body = strip_comment(line, ctx);
      body = trim(body);
      if (body.empty()) continue;
      if (body.front() == '[') {
        if (body.back() != ']') throw ParseError(ctx + ": unterminated section header");
        section = trim(body.substr(1, body.size() - 2));
        if (section.empty()) throw ParseError(ctx + ": empty section name");
        doc.section_order_.push_back(section);
        doc.sections_[section];
        continue;
      }
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw ParseError(ctx + ": expected 'key = value'");
      const std::string key = trim(body.substr(0, eq));
      if (key.empty()) throw ParseError(ctx + ": empty key");
      doc.sections_[section][key] = parse_value(trim(body.substr(eq + 1)), ctx);
    }
    return doc;
  }

  static TomlDoc parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  bool has_section(const std::string& section) const {
    return sections_.count(section) > 0;
  }

  bool is_string(const std::string& section, const std::string& key) const {
    return has(section, key) && get(section, key).kind == TomlValue::Kind::string;
  }

  std::vector<std::string> section_names() const { return section_order_; }

  double number(const std::string& section, const std::string& key) const {
    const TomlValue& v = get(section, key);
    if (v.kind != TomlValue::Kind::number)
      throw ParseError("config: [" + section + "] " + key + " must be a number");
    return v.num;
  }

  double number_or(const std::string& section, const std::string& key, double dflt) const {
    return has(section, key) ? number(section, key) : dflt;
  }

  long integer(const std::string& section, const std::string& key) const {
    const double v = number(section, key);
    if (v != std::floor(v))
      throw ParseError("config: [" + section + "] " + key + " must be an integer");
    return static_cast<long>(v);
  }

  long integer_or(const std::string& section, const std::string& key, long dflt) const {
    return has(section, key) ? integer(section, key) : dflt;
  }

  bool boolean_or(const std::string& section, const std::string& key, bool dflt) const {
    if (!has(section, key)) return dflt;
    const TomlValue& v = get(section, key);
    if (v.kind != TomlValue::Kind::boolean)
      throw ParseError("config: [" + section + "] " + key + " must be true/false");
    return v.b;
  }

  std::string string_or(const std::string& section, const std::string& key,
                        const std::string& dflt) const {
    if (!has(section, key)) return dflt;
    const TomlValue& v = get(section, key);
    if (v.kind != TomlValue::Kind::string)
      throw ParseError("config: [" + section + "] " + key + " must be a string");
    return v.str;
  }

  std::vector<double> numbers(const std::string& section, const std::string& key) const {
    const TomlValue& v = get(section, key);
    if (v.kind == TomlValue::Kind::number) return {v.num};  // scalar promotes
    if (v.kind != TomlValue::Kind::number_array)
      throw ParseError("config: [" + section + "] " + key + " must be a number array");
    return v.nums;
  }

  std::vector<double> numbers_or(const std::string& section, const std::string& key,
                                 const std::vector<double>& dflt) const {
    return has(section, key) ? numbers(section, key) : dflt;
  }

 private:
  std::map<std::string, std::map<std::string, TomlValue>> sections_;
  std::vector<std::string> section_order_;

  const TomlValue& get(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end() || !s->second.count(key))
      throw ParseError("config: missing [" + section + "] " + key);
    return s->second.at(key);
  }

  static std::string strip_comment(const std::string& line, const std::string& ctx) {
    std::string out;
    bool quoted = false;
    for (char c : line) {
      if (c == '"') quoted = !quoted;
      if (c == '#' && !quoted) break;
      out += c;
    }
    if (quoted) throw ParseError(ctx + ": unterminated string");
    return out;
  }

  static TomlValue parse_scalar(const std::string& text, const std::string& ctx) {
    TomlValue v;
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
      v.kind = TomlValue::Kind::string;
      v.str = text.substr(1, text.size() - 2);
      return v;
    }
    if (text == "true" || text == "false") {
      v.kind = TomlValue::Kind::boolean;
      v.b = text == "true";
      return v;
    }
    char* end = nullptr;
    v.num = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size())
      throw ParseError(ctx + ": cannot parse value '" + text + "'");
    v.kind = TomlValue::Kind::number;
    return v;
  }

  static TomlValue parse_value(const std::string& text, const std::string& ctx) {
    if (text.empty()) throw ParseError(ctx + ": empty value");
    if (text.front() != '[') return parse_scalar(text, ctx);
    if (text.back() != ']') throw ParseError(ctx + ": unterminated array");
    const std::string inner = trim(text.substr(1, text.size() - 2));
    TomlValue v;
    v.kind = TomlValue::Kind::number_array;
    if (inner.empty()) return v;
    std::vector<std::string> parts;
    std::string cur;
    bool quoted = false;
    for (char c : inner) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    parts.push_back(cur);
    bool strings = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const TomlValue el = parse_scalar(trim(parts[i]), ctx);
      if (i == 0) strings = el.kind == TomlValue::Kind::string;
      if (el.kind == TomlValue::Kind::string) {
        if (!strings) throw ParseError(ctx + ": mixed array element types");
        v.strs.push_back(el.str);
      } else if (el.kind == TomlValue::Kind::number) {
        if (strings) throw ParseError(ctx + ": mixed array element types");
        v.nums.push_back(el.num);
      } else {
        throw ParseError(ctx + ": booleans not allowed in arrays");
      }
    }
    v.kind = strings ? TomlValue::Kind::string_array : TomlValue::Kind::number_array;
    return v;
  }
};

}  // namespace overlearn
