#include "esma/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "esma/errors.hpp"
#include "esma/loss.hpp"
#include "esma/rng.hpp"

namespace esma {

std::vector<double> project_linf(std::span<const double> x_adv, std::span<const double> x_orig,
                                 double epsilon, DataRange range) {
  if (x_adv.size() != x_orig.size()) throw InvalidInput("project_linf: shape mismatch");
  std::vector<double> out(x_adv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::clamp(x_adv[i], x_orig[i] - epsilon, x_orig[i] + epsilon);
    out[i] = std::clamp(v, range.low, range.high);
  }
  return out;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidConfig("attack: epsilon must be >= 0");
  if (steps < 1) throw InvalidConfig("attack: steps must be >= 1");
  if (!(alpha() >= 0.0)) throw InvalidConfig("attack: step size must be >= 0");
  if (!(momentum >= 0.0)) throw InvalidConfig("attack: momentum must be >= 0");
  if (!(range.low <= range.high)) throw InvalidConfig("attack: empty data range");
}

double attack_objective(std::span<const double> logits, ClassIndex target,
                        std::span<const double> anchor, AttackLoss loss) {
  if (loss == AttackLoss::ce_targeted) return softmax_ce(logits, target);
  double s = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double d = logits[c] - anchor[c];
    s += d * d;
  }
  return s;
}

namespace {

std::vector<double> objective_logit_grad(std::span<const double> logits, ClassIndex target,
                                         std::span<const double> anchor, AttackLoss loss) {
  if (loss == AttackLoss::ce_targeted) return softmax_ce_grad(logits, target);
  std::vector<double> g(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) g[c] = 2.0 * (logits[c] - anchor[c]);
  return g;
}

}  // namespace

AttackTrajectory momentum_iterative_attack(const MlpClassifier& surrogate,
                                           std::span<const double> x, ClassIndex target,
                                           std::span<const double> anchor,
                                           const AttackConfig& config) {
  config.validate();
  if (x.size() != surrogate.input_dim()) throw InvalidInput("attack: input dimension mismatch");
  if (target >= surrogate.output_dim()) throw InvalidInput("attack: target out of range");
  if (config.loss == AttackLoss::anchor_sq && anchor.size() != surrogate.output_dim()) {
    throw InvalidConfig("attack: anchor_sq requires a K-dimensional anchor");
  }
  const double alpha = config.alpha();
  AttackTrajectory out;
  out.adversarial.assign(x.begin(), x.end());
  std::vector<double> momentum(x.size(), 0.0);

  auto logits = forward_point(surrogate, out.adversarial);
  out.objective_trace.push_back(attack_objective(logits, target, anchor, config.loss));
  for (std::size_t t = 0; t < config.steps; ++t) {
    const auto dz = objective_logit_grad(logits, target, anchor, config.loss);
    const auto grad = input_gradient(surrogate, out.adversarial, dz);
    double l1 = 0.0;
    for (double g : grad) l1 += std::abs(g);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      momentum[i] = config.momentum * momentum[i] + (l1 > 0.0 ? grad[i] / l1 : 0.0);
    }
    std::vector<double> stepped(out.adversarial);
    for (std::size_t i = 0; i < stepped.size(); ++i) {
      const double s = momentum[i] > 0.0 ? 1.0 : (momentum[i] < 0.0 ? -1.0 : 0.0);
      stepped[i] -= alpha * s;
    }
    out.adversarial = project_linf(stepped, x, config.epsilon, config.range);
    logits = forward_point(surrogate, out.adversarial);
    out.objective_trace.push_back(attack_objective(logits, target, anchor, config.loss));
  }
  return out;
}

std::vector<AttackRequest> all_target_requests(const LabeledDataset& data) {
  std::vector<AttackRequest> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (ClassIndex t = 0; t < data.num_classes; ++t) {
      if (t != data.labels[i]) out.push_back({i, data.labels[i], t});
    }
  }
  return out;
}

AttackResult run_attack(const MlpClassifier& surrogate, const Tensor2& points,
                        std::span<const AttackRequest> requests, const AttackConfig& config,
                        const AnchorBook* book, const LabeledDataset* anchor_pool,
                        std::uint64_t seed) {
  config.validate();
  const bool needs_anchor = config.loss == AttackLoss::anchor_sq;
  const bool random_anchor = needs_anchor && config.anchor_source == AnchorSource::random_member;
  if (needs_anchor && !random_anchor && !book) throw InvalidConfig("attack: screened anchors need a book");
  if (random_anchor && !anchor_pool) throw InvalidConfig("attack: random anchors need a sample pool");

  std::vector<std::vector<std::size_t>> pool_by_class;
  if (random_anchor) {
    for (ClassIndex k = 0; k < anchor_pool->num_classes; ++k) {
      pool_by_class.push_back(anchor_pool->class_indices(k));
    }
  }
  Rng rng(derive_seed(seed, "random-anchor"));

  AttackResult out;
  out.requests.assign(requests.begin(), requests.end());
  out.clean = Tensor2(requests.size(), points.cols);
  out.adversarial = Tensor2(requests.size(), points.cols);
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const auto& req = requests[r];
    if (req.sample_id >= points.rows) throw InvalidInput("attack: sample id out of range");
    if (req.target == req.source) throw InvalidInput("attack: target equals source class");
    std::vector<double> anchor;
    if (needs_anchor) {
      if (random_anchor) {
        if (req.target >= pool_by_class.size() || pool_by_class[req.target].empty()) {
          throw InvalidInput("attack: target class absent from anchor pool");
        }
        const auto& pool = pool_by_class[req.target];
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        anchor = forward_point(surrogate, anchor_pool->points.row(pool[pick(rng)]));
      } else {
        if (req.target >= book->anchors.size()) throw InvalidInput("attack: no anchor for target");
        anchor = book->anchors[req.target];
      }
    }
    const auto x = points.row(req.sample_id);
    auto traj = momentum_iterative_attack(surrogate, x, req.target, anchor, config);
    std::copy(x.begin(), x.end(), out.clean.row(r).begin());
    std::copy(traj.adversarial.begin(), traj.adversarial.end(), out.adversarial.row(r).begin());
    out.final_objective.push_back(traj.objective_trace.back());
    out.objective_traces.push_back(std::move(traj.objective_trace));
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> success_flags(std::span<const MlpClassifier> victims,
                                                     const AttackResult& result) {
  std::vector<std::vector<std::uint8_t>> out;
  for (const auto& v : victims) {
    const Tensor2 logits = forward(v, result.adversarial);
    std::vector<std::uint8_t> flags(result.requests.size());
    for (std::size_t i = 0; i < flags.size(); ++i) {
      flags[i] = argmax(logits.row(i)) == result.requests[i].target ? 1 : 0;
    }
    out.push_back(std::move(flags));
  }
  return out;
}

std::vector<double> transfer_success_rate(std::span<const MlpClassifier> victims,
                                          const AttackResult& result) {
  std::vector<double> rates;
  for (const auto& flags : success_flags(victims, result)) {
    std::size_t hits = 0;
    for (auto f : flags) hits += f;
    rates.push_back(flags.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(flags.size()));
  }
  return rates;
}

}  // namespace esma
