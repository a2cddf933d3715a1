#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "esma/tensor.hpp"

namespace esma {

using ClassIndex = std::size_t;

/// Points in R^d with integer labels in [0, num_classes).
struct LabeledDataset {
  Tensor2 points;
  std::vector<ClassIndex> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return points.cols; }

  /// Throws InvalidInput when rows/labels disagree or a label is out of range.
  void validate() const;

  /// Indices of the samples of class k, ascending.
  std::vector<std::size_t> class_indices(ClassIndex k) const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

}  // namespace esma
