#include "esma/report.hpp"

#include <fstream>
#include <json.hpp>
#include <ostream>

#include "esma/errors.hpp"
#include "esma/textio.hpp"

namespace esma {

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw InvalidInput("table " + name + ": row has " + std::to_string(row.size()) +
                       " cells, header has " + std::to_string(columns.size()));
  }
  rows.push_back(std::move(row));
}

std::size_t Table::column(const std::string& column_name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == column_name) return i;
  }
  throw InvalidInput("table " + name + ": no column " + column_name);
}

const Table& ExperimentReport::table(const std::string& name) const {
  for (const auto& t : tables) {
    if (t.name == name) return t;
  }
  throw InvalidInput("report " + id + ": no table " + name);
}

std::string csv_cell(const Cell& cell) {
  if (const auto* i = std::get_if<std::int64_t>(&cell)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&cell)) return format_double(*d);
  const auto& s = std::get<std::string>(cell);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

void write_csv(std::ostream& os, const Table& table) {
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i) os << ',';
    os << table.columns[i];
  }
  os << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ',';
      os << csv_cell(row[i]);
    }
    os << '\n';
  }
}

void write_report(const std::filesystem::path& dir, const ExperimentReport& report) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const auto& t : report.tables) {
    const std::string file = t.name + ".csv";
    std::ofstream os(dir / file);
    if (!os) throw FormatError("cannot write " + (dir / file).string());
    write_csv(os, t);
    manifest.push_back({{"table", t.name}, {"file", file}, {"columns", t.columns},
                        {"rows", t.rows.size()}});
  }
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.config) config[k] = v;
  nlohmann::ordered_json j;
  j["experiment"] = report.id;
  j["config"] = config;
  j["seeds"] = report.seeds;
  j["files"] = manifest;
  std::ofstream os(dir / "report.json");
  if (!os) throw FormatError("cannot write " + (dir / "report.json").string());
  os << j.dump(2) << '\n';
}

}  // namespace esma
