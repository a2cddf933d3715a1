#pragma once

#include <span>
#include <vector>

#include "esma/dataset.hpp"

namespace esma {

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

/// -log softmax(logits)[label]. Throws InvalidInput for a bad label.
double softmax_ce(std::span<const double> logits, ClassIndex label);

/// Gradient of softmax_ce w.r.t. the logits: softmax(logits) - onehot(label).
std::vector<double> softmax_ce_grad(std::span<const double> logits, ClassIndex label);

/// Index of the largest entry; ties go to the lowest index.
ClassIndex argmax(std::span<const double> values);

}  // namespace esma
