#include "esma/textio.hpp"

#include <charconv>
#include <cmath>
#include <limits>

#include "esma/errors.hpp"

namespace esma {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view token) {
  if (token == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (token == "inf") return std::numeric_limits<double>::infinity();
  if (token == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc{} || res.ptr != token.data() + token.size()) {
    throw FormatError("not a number: '" + std::string(token) + "'");
  }
  return v;
}

std::size_t parse_count(std::string_view token) {
  std::size_t v = 0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc{} || res.ptr != token.data() + token.size()) {
    throw FormatError("not a count: '" + std::string(token) + "'");
  }
  return v;
}

void write_values(std::ostream& os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ' ';
    os << format_double(values[i]);
  }
  os << '\n';
}

std::string TokenReader::next() {
  std::string tok;
  if (!(is_ >> tok)) throw FormatError("unexpected end of input");
  return tok;
}

void TokenReader::expect(std::string_view literal) {
  const std::string tok = next();
  if (tok != literal) {
    throw FormatError("expected '" + std::string(literal) + "', found '" + tok + "'");
  }
}

std::size_t TokenReader::count() { return parse_count(next()); }

double TokenReader::real() { return parse_double(next()); }

std::vector<double> TokenReader::reals(std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = real();
  return out;
}

}  // namespace esma
