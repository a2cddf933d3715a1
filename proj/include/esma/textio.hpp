#pragma once

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace esma {

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

/// Strict parse of a complete decimal token. Throws FormatError.
double parse_double(std::string_view token);
std::size_t parse_count(std::string_view token);

void write_values(std::ostream& os, std::span<const double> values);

/// Whitespace-token reader for the checkpoint formats.
class TokenReader {
 public:
  explicit TokenReader(std::istream& is) : is_(is) {}
  std::string next();
  void expect(std::string_view literal);
  std::size_t count();
  double real();
  std::vector<double> reals(std::size_t n);

 private:
  std::istream& is_;
};

}  // namespace esma
