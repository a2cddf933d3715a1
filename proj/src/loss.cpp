#include "esma/loss.hpp"

#include <algorithm>
#include <cmath>

#include "esma/errors.hpp"

namespace esma {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

double softmax_ce(std::span<const double> logits, ClassIndex label) {
  if (label >= logits.size()) throw InvalidInput("softmax_ce: label out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  return std::log(z) - (logits[label] - m);
}

std::vector<double> softmax_ce_grad(std::span<const double> logits, ClassIndex label) {
  if (label >= logits.size()) throw InvalidInput("softmax_ce_grad: label out of range");
  auto g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

ClassIndex argmax(std::span<const double> values) {
  ClassIndex best = 0;
  for (ClassIndex k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

}  // namespace esma
