#include "esma/dataset.hpp"

#include "esma/errors.hpp"

namespace esma {

void LabeledDataset::validate() const {
  if (points.rows != labels.size()) throw InvalidInput("dataset: point/label count mismatch");
  if (points.data.size() != points.rows * points.cols) throw InvalidInput("dataset: bad tensor");
  for (ClassIndex y : labels) {
    if (y >= num_classes) throw InvalidInput("dataset: label out of range");
  }
}

std::vector<std::size_t> LabeledDataset::class_indices(ClassIndex k) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == k) out.push_back(i);
  }
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.points = gather_rows(points, indices);
  out.num_classes = num_classes;
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

}  // namespace esma
