#include "esma/optim.hpp"

#include <cmath>

#include "esma/errors.hpp"

namespace esma {

AdamW::AdamW(std::size_t n, AdamWConfig config) : config_(config), m_(n, 0.0), v_(n, 0.0) {
  if (!(config_.lr > 0.0)) throw InvalidConfig("AdamW: learning rate must be > 0");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 &&
        config_.beta2 < 1.0)) {
    throw InvalidConfig("AdamW: betas must lie in [0, 1)");
  }
}

void AdamW::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw InvalidInput("AdamW: parameter count changed");
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - config_.lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] *= decay;
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
  }
}

}  // namespace esma
