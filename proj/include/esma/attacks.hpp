#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "esma/dataset.hpp"
#include "esma/mlp.hpp"
#include "esma/screening.hpp"

namespace esma {

struct DataRange {
  double low = -std::numeric_limits<double>::infinity();
  double high = std::numeric_limits<double>::infinity();

  static DataRange unbounded() { return {}; }
  static DataRange unit() { return {0.0, 1.0}; }
};

/// Clamp into [x_orig - eps, x_orig + eps], then into the data range.
std::vector<double> project_linf(std::span<const double> x_adv, std::span<const double> x_orig,
                                 double epsilon, DataRange range);

enum class AttackLoss { ce_targeted, anchor_sq };
enum class AnchorSource { screened, random_member };

struct AttackConfig {
  double epsilon = 1.0;
  std::size_t steps = 20;
  std::optional<double> step_size;  // defaults to epsilon / steps
  double momentum = 1.0;            // 0 gives plain iterative FGSM
  AttackLoss loss = AttackLoss::anchor_sq;
  AnchorSource anchor_source = AnchorSource::screened;
  DataRange range{};

  double alpha() const { return step_size.value_or(epsilon / static_cast<double>(steps)); }
  void validate() const;
};

/// Objective minimized by the attack at logits `z`.
double attack_objective(std::span<const double> logits, ClassIndex target,
                        std::span<const double> anchor, AttackLoss loss);

struct AttackTrajectory {
  std::vector<double> adversarial;
  std::vector<double> objective_trace;  // steps + 1 values: start, then after each step
};

/// Sign-gradient descent with momentum on the chosen objective, projecting
/// after each step: g <- mu g + grad / ||grad||_1, x <- P(x - alpha sign(g)).
/// `anchor` is required (K values) iff loss == anchor_sq.
AttackTrajectory momentum_iterative_attack(const MlpClassifier& surrogate,
                                           std::span<const double> x, ClassIndex target,
                                           std::span<const double> anchor,
                                           const AttackConfig& config);

/// One (source sample, target class) pair to attack.
struct AttackRequest {
  std::size_t sample_id = 0;
  ClassIndex source = 0;
  ClassIndex target = 0;
};

/// All ordered (sample, target != label) pairs of a dataset.
std::vector<AttackRequest> all_target_requests(const LabeledDataset& data);

struct AttackResult {
  std::vector<AttackRequest> requests;
  Tensor2 clean;        // one row per request
  Tensor2 adversarial;  // one row per request
  std::vector<double> final_objective;
  std::vector<std::vector<double>> objective_traces;
};

/// Attacks every request. Screened anchors come from `book`; random-member
/// anchors are the surrogate logits of a uniformly drawn sample of the target
/// class in `anchor_pool`, redrawn per request from an RNG seeded with `seed`.
AttackResult run_attack(const MlpClassifier& surrogate, const Tensor2& points,
                        std::span<const AttackRequest> requests, const AttackConfig& config,
                        const AnchorBook* book, const LabeledDataset* anchor_pool,
                        std::uint64_t seed);

/// success[v][i]: victim v's argmax on adversarial row i equals the request target.
std::vector<std::vector<std::uint8_t>> success_flags(std::span<const MlpClassifier> victims,
                                                     const AttackResult& result);

/// Per-victim fraction of requests classified as their target.
std::vector<double> transfer_success_rate(std::span<const MlpClassifier> victims,
                                          const AttackResult& result);

}  // namespace esma
