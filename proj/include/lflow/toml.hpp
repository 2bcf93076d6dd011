#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lflow/errors.hpp"

namespace lflow {

// Flat TOML subset sufficient for run configuration: one level of [section]
// headers, scalar values (string, bool, integer, float), and # comments.
// Keys are flattened to "section.key".
struct TomlValue {
  enum class Kind { kString, kBool, kInt, kFloat };
  Kind kind = Kind::kString;
  std::string str;
  bool boolean = false;
  long long integer = 0;
  double number = 0.0;

  static TomlValue of(const std::string& s);
  static TomlValue of(const char* s) { return of(std::string(s)); }
  static TomlValue of(bool b);
  static TomlValue of(long long i);
  static TomlValue of(int i) { return of(static_cast<long long>(i)); }
  static TomlValue of(std::uint64_t i);
  static TomlValue of(double d);

  std::string as_string() const;
  bool as_bool() const;
  long long as_int() const;
  std::uint64_t as_u64() const;
  double as_double() const;  // integers promote
};

// Ordered so that serialisation preserves section grouping.
using TomlTable = std::vector<std::pair<std::string, TomlValue>>;

const TomlValue* toml_find(const TomlTable& table, const std::string& key);

TomlTable parse_toml(const std::string& text);
TomlTable parse_toml_file(const std::filesystem::path& path);
std::string serialize_toml(const TomlTable& table);

}  // namespace lflow
