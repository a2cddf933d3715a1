#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "esma/dataset.hpp"
#include "esma/mlp.hpp"
#include "esma/rng.hpp"
#include "esma/tensor.hpp"

namespace esma::testing {

// |a - b| / max(|a|, |b|, floor)
inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of f around x[i]; x is restored.
inline double central_difference(const std::function<double()>& f, double& xi, double h = 1e-5) {
  const double saved = xi;
  xi = saved + h;
  const double up = f();
  xi = saved - h;
  const double down = f();
  xi = saved;
  return (up - down) / (2.0 * h);
}

inline Tensor2 random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor2 t(r, c);
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline LabeledDataset random_dataset(std::size_t n, std::size_t d, std::size_t k, Rng& rng) {
  LabeledDataset data;
  data.points = random_tensor(n, d, rng);
  data.num_classes = k;
  for (std::size_t i = 0; i < n; ++i) data.labels.push_back(i % k);
  return data;
}

// Straight-line re-evaluation of an MLP, written independently of forward().
inline std::vector<double> reference_forward(const MlpClassifier& m, std::vector<double> x) {
  for (const auto& layer : m.layers()) {
    std::vector<double> y(layer.out_dim());
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < layer.in_dim(); ++i) s += layer.weight(o, i) * x[i];
      s += layer.bias[o];
      y[o] = layer.activation == Activation::relu ? std::max(0.0, s) : s;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace esma::testing
