#pragma once

#include <span>
#include <vector>

namespace esma {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: p <- p - lr * wd * p before the moment step
};

/// Adaptive-moment optimizer with decoupled weight decay over a flat parameter vector.
class AdamW {
 public:
  AdamW(std::size_t n, AdamWConfig config);
  void step(std::span<double> params, std::span<const double> grads);
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace esma
