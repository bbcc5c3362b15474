#include "pcal/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pcal/error.hpp"

namespace pcal::config {

namespace {

bool key_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Drops a trailing comment, ignoring '#' inside quotes.
std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && quoted) {
      ++i;
    } else if (s[i] == '"') {
      quoted = !quoted;
    } else if (s[i] == '#' && !quoted) {
      return s.substr(0, i);
    }
  }
  return s;
}

class ValueParser {
 public:
  ValueParser(std::string_view s, std::size_t line) : s_(s), line_(line) {}

  Value parse_all() {
    Value v = parse();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected text after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, what); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  Value parse() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    Value out;
    out.line = line_;
    const char c = s_[pos_];
    if (c == '"') {
      out.v = parse_string();
    } else if (c == '[') {
      ++pos_;
      Array items;
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == ']') {
        ++pos_;
      } else {
        for (;;) {
          items.push_back(parse());
          skip_ws();
          if (pos_ >= s_.size()) fail("unterminated list");
          if (s_[pos_] == ',') {
            ++pos_;
            continue;
          }
          if (s_[pos_] == ']') {
            ++pos_;
            break;
          }
          fail("expected ',' or ']' in list");
        }
      }
      out.v = std::move(items);
    } else {
      std::size_t end = pos_;
      while (end < s_.size() && s_[end] != ',' && s_[end] != ']' && !std::isspace(static_cast<unsigned char>(s_[end]))) {
        ++end;
      }
      const std::string tok(s_.substr(pos_, end - pos_));
      pos_ = end;
      if (tok == "true" || tok == "false") {
        out.v = tok == "true";
      } else {
        char* stop = nullptr;
        const double d = std::strtod(tok.c_str(), &stop);
        if (tok.empty() || *stop != 0 || !std::isfinite(d)) fail("bad value '" + tok + "'");
        out.v = d;
      }
    }
    return out;
  }

  std::string parse_string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size()) {
      const char c = s_[pos_++];
      if (c == '"') return out;
      if (c == '\\') {
        if (pos_ >= s_.size()) break;
        const char e = s_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          default: out += e;
        }
      } else {
        out += c;
      }
    }
    fail("unterminated string");
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

const char* type_name(const Value& v) {
  switch (v.v.index()) {
    case 0: return "number";
    case 1: return "boolean";
    case 2: return "string";
    default: return "list";
  }
}

[[noreturn]] void type_error(const std::string& path, const Value& v, const char* want) {
  throw InvalidParameter(path + ": expected " + want + ", got " + type_name(v) + " (line " +
                         std::to_string(v.line) + ")");
}

}  // namespace

Document Document::parse(std::string_view text) {
  Document doc;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto raw = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
      const auto name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) throw ParseError(line_no, "empty section name");
      for (char c : name) {
        if (!key_char(c)) throw ParseError(line_no, "bad section name '" + std::string(name) + "'");
      }
      section = std::string(name);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(line_no, "missing key");
    for (char c : key) {
      if (!key_char(c)) throw ParseError(line_no, "bad key '" + std::string(key) + "'");
    }
    const std::string path = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (doc.values_.count(path)) throw ParseError(line_no, "duplicate key '" + path + "'");
    doc.values_[path] = ValueParser(trim(line.substr(eq + 1)), line_no).parse_all();
  }
  return doc;
}

Document Document::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path + ": " + std::string(e.what()));
  }
}

bool Document::has_section(const std::string& section) const {
  const auto it = values_.lower_bound(section + ".");
  return it != values_.end() && it->first.compare(0, section.size() + 1, section + ".") == 0;
}

const Value& Document::at(const std::string& path) const {
  const auto it = values_.find(path);
  if (it == values_.end()) throw InvalidParameter(path + ": missing");
  return it->second;
}

double Document::number(const std::string& path) const {
  const auto& v = at(path);
  if (const auto* d = std::get_if<double>(&v.v)) return *d;
  type_error(path, v, "number");
}

std::int64_t Document::integer(const std::string& path) const {
  const auto& v = at(path);
  const auto* d = std::get_if<double>(&v.v);
  if (!d || std::floor(*d) != *d || std::abs(*d) > 9e15) type_error(path, v, "integer");
  return static_cast<std::int64_t>(*d);
}

bool Document::boolean(const std::string& path) const {
  const auto& v = at(path);
  if (const auto* b = std::get_if<bool>(&v.v)) return *b;
  type_error(path, v, "boolean");
}

std::string Document::string(const std::string& path) const {
  const auto& v = at(path);
  if (const auto* s = std::get_if<std::string>(&v.v)) return *s;
  type_error(path, v, "string");
}

std::vector<double> Document::numbers(const std::string& path) const {
  const auto& v = at(path);
  const auto* a = std::get_if<Array>(&v.v);
  if (!a) type_error(path, v, "list of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < a->size(); ++i) {
    const auto* d = std::get_if<double>(&(*a)[i].v);
    if (!d) type_error(path + "[" + std::to_string(i) + "]", (*a)[i], "number");
    out.push_back(*d);
  }
  return out;
}

std::vector<std::string> Document::strings(const std::string& path) const {
  const auto& v = at(path);
  const auto* a = std::get_if<Array>(&v.v);
  if (!a) type_error(path, v, "list of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < a->size(); ++i) {
    const auto* s = std::get_if<std::string>(&(*a)[i].v);
    if (!s) type_error(path + "[" + std::to_string(i) + "]", (*a)[i], "string");
    out.push_back(*s);
  }
  return out;
}

void Document::reject_unknown(const std::set<std::string>& known) const {
  const std::pair<const std::string, Value>* first = nullptr;
  for (const auto& kv : values_) {
    if (known.count(kv.first)) continue;
    if (!first || kv.second.line < first->second.line) first = &kv;
  }
  if (first) {
    throw InvalidParameter(first->first + ": unknown key (line " + std::to_string(first->second.line) + ")");
  }
}

void Document::set(const std::string& path, Value v) { values_[path] = std::move(v); }

}  // namespace pcal::config
