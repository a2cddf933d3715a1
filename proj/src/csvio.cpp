#include "esma/csvio.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "esma/errors.hpp"
#include "esma/textio.hpp"

namespace esma {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool next_line(std::istream& is, std::string& line) {
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) return true;
  }
  return false;
}

}  // namespace

void write_dataset_csv(std::ostream& os, const LabeledDataset& data) {
  data.validate();
  for (std::size_t j = 0; j < data.dim(); ++j) os << 'x' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.points.row(i)) os << format_double(v) << ',';
    os << data.labels[i] << '\n';
  }
}

LabeledDataset read_dataset_csv(std::istream& is, std::size_t num_classes) {
  std::string line;
  if (!next_line(is, line)) throw FormatError("dataset csv: missing header");
  const auto header = split(line);
  if (header.size() < 2 || header.back() != "label") {
    throw FormatError("dataset csv: header must end with 'label'");
  }
  const std::size_t d = header.size() - 1;
  std::vector<double> values;
  LabeledDataset out;
  while (next_line(is, line)) {
    const auto cells = split(line);
    if (cells.size() != d + 1) throw FormatError("dataset csv: ragged row '" + line + "'");
    for (std::size_t j = 0; j < d; ++j) values.push_back(parse_double(cells[j]));
    out.labels.push_back(parse_count(cells[d]));
    out.num_classes = std::max(out.num_classes, out.labels.back() + 1);
  }
  out.num_classes = std::max(out.num_classes, num_classes);
  out.points = Tensor2(out.labels.size(), d, std::move(values));
  out.validate();
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& data) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  write_dataset_csv(os, data);
}

LabeledDataset read_dataset_csv(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return read_dataset_csv(is, num_classes);
}

void write_attack_csv(std::ostream& os, const AttackResult& result) {
  const std::size_t d = result.clean.cols;
  os << "sample_id,source_class,target_class,final_objective";
  for (std::size_t j = 0; j < d; ++j) os << ",clean_" << j;
  for (std::size_t j = 0; j < d; ++j) os << ",adv_" << j;
  os << '\n';
  for (std::size_t i = 0; i < result.requests.size(); ++i) {
    const auto& rq = result.requests[i];
    os << rq.sample_id << ',' << rq.source << ',' << rq.target << ','
       << (i < result.final_objective.size() ? format_double(result.final_objective[i]) : "");
    for (double v : result.clean.row(i)) os << ',' << format_double(v);
    for (double v : result.adversarial.row(i)) os << ',' << format_double(v);
    os << '\n';
  }
}

AttackResult read_attack_csv(std::istream& is) {
  std::string line;
  if (!next_line(is, line)) throw FormatError("attack csv: missing header");
  const auto header = split(line);
  if (header.size() < 6 || (header.size() - 4) % 2 != 0 || header[0] != "sample_id") {
    throw FormatError("attack csv: unexpected header");
  }
  const std::size_t d = (header.size() - 4) / 2;
  AttackResult out;
  std::vector<double> clean, adv;
  bool objectives = true;
  while (next_line(is, line)) {
    const auto cells = split(line);
    if (cells.size() != header.size()) throw FormatError("attack csv: ragged row '" + line + "'");
    out.requests.push_back({parse_count(cells[0]), parse_count(cells[1]), parse_count(cells[2])});
    if (cells[3].empty()) {
      objectives = false;
    } else {
      out.final_objective.push_back(parse_double(cells[3]));
    }
    for (std::size_t j = 0; j < d; ++j) clean.push_back(parse_double(cells[4 + j]));
    for (std::size_t j = 0; j < d; ++j) adv.push_back(parse_double(cells[4 + d + j]));
  }
  if (!objectives) out.final_objective.clear();
  out.clean = Tensor2(out.requests.size(), d, std::move(clean));
  out.adversarial = Tensor2(out.requests.size(), d, std::move(adv));
  return out;
}

void write_attack_csv(const std::filesystem::path& path, const AttackResult& result) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  write_attack_csv(os, result);
}

AttackResult read_attack_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return read_attack_csv(is);
}

}  // namespace esma
