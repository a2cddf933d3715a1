#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace esma {

using Cell = std::variant<std::int64_t, double, std::string>;

/// One metric table; written as a CSV file with a header row.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  /// Throws InvalidInput when the row width differs from the header.
  void add_row(std::vector<Cell> row);
  std::size_t column(const std::string& column_name) const;
};

struct ExperimentReport {
  std::string id;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::uint64_t> seeds;
  std::vector<Table> tables;

  const Table& table(const std::string& name) const;
};

/// Integers verbatim, reals as shortest round-trip decimals, strings quoted
/// only when they contain a comma, quote or newline.
std::string csv_cell(const Cell& cell);
void write_csv(std::ostream& os, const Table& table);

/// Writes <dir>/<table>.csv for every table and <dir>/report.json holding the
/// id, config echo, seeds and the file manifest. Creates `dir` if needed.
void write_report(const std::filesystem::path& dir, const ExperimentReport& report);

}  // namespace esma
