#include "lflow/toml.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lflow {

TomlValue TomlValue::of(const std::string& s) {
  TomlValue v;
  v.kind = Kind::kString;
  v.str = s;
  return v;
}
TomlValue TomlValue::of(bool b) {
  TomlValue v;
  v.kind = Kind::kBool;
  v.boolean = b;
  return v;
}
TomlValue TomlValue::of(long long i) {
  TomlValue v;
  v.kind = Kind::kInt;
  v.integer = i;
  return v;
}
TomlValue TomlValue::of(std::uint64_t i) {
  return of(static_cast<long long>(i));
}
TomlValue TomlValue::of(double d) {
  TomlValue v;
  v.kind = Kind::kFloat;
  v.number = d;
  return v;
}

std::string TomlValue::as_string() const {
  if (kind != Kind::kString) throw ConfigError("expected a string value");
  return str;
}
bool TomlValue::as_bool() const {
  if (kind != Kind::kBool) throw ConfigError("expected a boolean value");
  return boolean;
}
long long TomlValue::as_int() const {
  if (kind != Kind::kInt) throw ConfigError("expected an integer value");
  return integer;
}
std::uint64_t TomlValue::as_u64() const {
  return static_cast<std::uint64_t>(as_int());
}
double TomlValue::as_double() const {
  if (kind == Kind::kFloat) return number;
  if (kind == Kind::kInt) return static_cast<double>(integer);
  throw ConfigError("expected a numeric value");
}

const TomlValue* toml_find(const TomlTable& table, const std::string& key) {
  for (const auto& [k, v] : table) {
    if (k == key) return &v;
  }
  return nullptr;
}

namespace {

std::string strip(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Removes a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

TomlValue parse_value(const std::string& raw, int line_no) {
  const std::string s = strip(raw);
  if (s.empty()) {
    throw ConfigError("missing value on line " + std::to_string(line_no));
  }
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') {
      throw ConfigError("unterminated string on line " + std::to_string(line_no));
    }
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '\\' && i + 2 < s.size()) {
        ++i;
        out.push_back(s[i] == 'n' ? '\n' : s[i]);
      } else {
        out.push_back(s[i]);
      }
    }
    return TomlValue::of(out);
  }
  if (s == "true") return TomlValue::of(true);
  if (s == "false") return TomlValue::of(false);

  // Integer if it parses fully without float syntax.
  if (s.find_first_of(".eE") == std::string::npos ||
      (s.size() > 1 && (s[0] == '0' && (s[1] == 'x' || s[1] == 'X')))) {
    long long iv = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), iv);
    if (ec == std::errc() && p == s.data() + s.size()) {
      return TomlValue::of(iv);
    }
  }
  char* end = nullptr;
  const double dv = std::strtod(s.c_str(), &end);
  if (end == s.c_str() + s.size() && std::isfinite(dv)) {
    return TomlValue::of(dv);
  }
  throw ConfigError("cannot parse value '" + s + "' on line " +
                    std::to_string(line_no));
}

}  // namespace

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("bad section header on line " + std::to_string(line_no));
      }
      section = strip(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("empty section name on line " + std::to_string(line_no));
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected key = value on line " + std::to_string(line_no));
    }
    const std::string key = strip(line.substr(0, eq));
    if (key.empty()) {
      throw ConfigError("empty key on line " + std::to_string(line_no));
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (toml_find(table, full)) {
      throw ConfigError("duplicate key: " + full);
    }
    table.emplace_back(full, parse_value(line.substr(eq + 1), line_no));
  }
  return table;
}

TomlTable parse_toml_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_toml(buf.str());
}

std::string serialize_toml(const TomlTable& table) {
  std::ostringstream out;
  std::string section;
  bool first = true;
  for (const auto& [key, value] : table) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
    if (sec != section || (first && !sec.empty())) {
      if (!first) out << "\n";
      if (!sec.empty()) out << "[" << sec << "]\n";
      section = sec;
    }
    first = false;
    out << leaf << " = ";
    switch (value.kind) {
      case TomlValue::Kind::kString: {
        out << '"';
        for (char c : value.str) {
          if (c == '"' || c == '\\') out << '\\';
          out << c;
        }
        out << '"';
        break;
      }
      case TomlValue::Kind::kBool:
        out << (value.boolean ? "true" : "false");
        break;
      case TomlValue::Kind::kInt:
        out << value.integer;
        break;
      case TomlValue::Kind::kFloat: {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", value.number);
        // Keep floats recognisable as floats on re-parse.
        std::string s(buf);
        if (s.find_first_of(".eEnN") == std::string::npos) s += ".0";
        out << s;
        break;
      }
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace lflow
