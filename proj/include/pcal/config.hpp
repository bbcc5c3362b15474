#pragma once

// Flat-section key/value config files:
//
//   # comment
//   [section]
//   key = 1.5
//   name = "chair"
//   flag = true
//   list = [1.0, 0.0]
//
// Keys are addressed as "section.key". Accessors throw InvalidParameter
// naming the field path; syntax errors are ParseError with a line number.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pcal::config {

struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<double, bool, std::string, Array> v;
  std::size_t line = 0;
};

class Document {
 public:
  static Document parse(std::string_view text);
  static Document parse_file(const std::string& path);

  bool has(const std::string& path) const { return values_.count(path) != 0; }
  bool has_section(const std::string& section) const;

  double number(const std::string& path) const;
  std::int64_t integer(const std::string& path) const;
  bool boolean(const std::string& path) const;
  std::string string(const std::string& path) const;
  std::vector<double> numbers(const std::string& path) const;
  std::vector<std::string> strings(const std::string& path) const;

  // Defaulted forms for optional keys.
  double number_or(const std::string& path, double d) const { return has(path) ? number(path) : d; }
  std::int64_t integer_or(const std::string& path, std::int64_t d) const { return has(path) ? integer(path) : d; }
  bool boolean_or(const std::string& path, bool d) const { return has(path) ? boolean(path) : d; }
  std::string string_or(const std::string& path, const std::string& d) const { return has(path) ? string(path) : d; }

  /// Throws for the first key (in file order) that is not in `known`.
  void reject_unknown(const std::set<std::string>& known) const;

  void set(const std::string& path, Value v);

 private:
  const Value& at(const std::string& path) const;
  std::map<std::string, Value> values_;
};

}  // namespace pcal::config
