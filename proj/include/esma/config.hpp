#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace esma {

/// Flat "key = value" settings. Blank lines and lines starting with '#' are
/// skipped. Keys are unique; later duplicates overwrite earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& is);
  static KeyValueConfig load(const std::filesystem::path& path);
  void save(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::size_t value);

  std::string text(const std::string& key, const std::string& fallback) const;
  double real(const std::string& key, double fallback) const;
  std::size_t count(const std::string& key, std::size_t fallback) const;
  /// Comma-separated unsigned integers, e.g. "0,1,2".
  std::vector<std::uint64_t> integers(const std::string& key,
                                      const std::vector<std::uint64_t>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::vector<std::uint64_t> parse_integer_list(const std::string& text);
std::string format_integer_list(const std::vector<std::uint64_t>& values);

}  // namespace esma
