#pragma once

#include <cstdint>
#include <vector>

#include "esma/dataset.hpp"
#include "esma/mlp.hpp"

namespace esma {

/// Step-size schedule eta_t, t = 1, 2, ...
struct LearningRate {
  enum class Kind { constant, inverse_t, inverse_sqrt };
  Kind kind = Kind::inverse_sqrt;
  double scale = 0.05;

  double at(std::size_t step) const;

  static LearningRate constant(double eta) { return {Kind::constant, eta}; }
  static LearningRate inverse_t(double c) { return {Kind::inverse_t, c}; }
  static LearningRate inverse_sqrt(double c) { return {Kind::inverse_sqrt, c}; }
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t total_steps = 3000;
  LearningRate lr{};
  std::size_t early_stop_tolerance = 30;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;

  /// Throws InvalidConfig on M < 1, T < 1, tolerance < 1, fraction outside (0,1).
  void validate() const;
};

struct TrainResult {
  MlpClassifier model;
  std::vector<double> loss_trace;        // training batch loss, one per step
  std::vector<double> validation_trace;  // early stopping only: one per evaluation
  std::size_t best_step = 0;             // early stopping only: step of the returned checkpoint
};

/// Mini-batch SGD: T steps of w <- w - eta_t * mean batch gradient, each batch
/// M distinct samples drawn from an RNG seeded with config.seed.
TrainResult sgd_train(MlpClassifier model, const LabeledDataset& data, const TrainConfig& config);

/// Holds out a seeded validation split, runs the same SGD stream on the rest,
/// evaluates validation loss at step 0 and every ceil(n_train / M) steps, and
/// stops after `early_stop_tolerance` evaluations without improvement.
/// Returns the best-validation checkpoint.
TrainResult early_stop_train(MlpClassifier model, const LabeledDataset& data,
                             const TrainConfig& config);

/// Train/validation index split used by early_stop_train.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split validation_split(std::size_t n, double fraction, std::uint64_t seed);

}  // namespace esma
