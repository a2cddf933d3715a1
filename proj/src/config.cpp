#include "esma/config.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "esma/errors.hpp"
#include "esma/textio.hpp"

namespace esma {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& is) {
  KeyValueConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + ": empty key");
    c.values_[key] = trim(t.substr(eq + 1));
  }
  return c;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return parse(is);
}

void KeyValueConfig::save(std::ostream& os) const {
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  save(os);
}

void KeyValueConfig::set(const std::string& key, double value) { values_[key] = format_double(value); }

void KeyValueConfig::set(const std::string& key, std::size_t value) {
  values_[key] = std::to_string(value);
}

std::string KeyValueConfig::text(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::real(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_double(it->second);
  } catch (const FormatError&) {
    throw InvalidConfig("config key '" + key + "': expected a number, got '" + it->second + "'");
  }
}

std::size_t KeyValueConfig::count(const std::string& key, std::size_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_count(it->second);
  } catch (const FormatError&) {
    throw InvalidConfig("config key '" + key + "': expected a count, got '" + it->second + "'");
  }
}

std::vector<std::uint64_t> KeyValueConfig::integers(
    const std::string& key, const std::vector<std::uint64_t>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  return parse_integer_list(it->second);
}

std::vector<std::uint64_t> parse_integer_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (t.empty()) continue;
    try {
      out.push_back(parse_count(t));
    } catch (const FormatError&) {
      throw InvalidConfig("expected a comma-separated integer list, got '" + text + "'");
    }
  }
  if (out.empty()) throw InvalidConfig("empty integer list");
  return out;
}

std::string format_integer_list(const std::vector<std::uint64_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace esma
