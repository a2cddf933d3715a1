#include "esma/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "esma/errors.hpp"
#include "esma/rng.hpp"

namespace esma {

double LearningRate::at(std::size_t step) const {
  const double t = static_cast<double>(std::max<std::size_t>(step, 1));
  switch (kind) {
    case Kind::constant: return scale;
    case Kind::inverse_t: return scale / t;
    case Kind::inverse_sqrt: return scale / std::sqrt(t);
  }
  return scale;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidConfig("train: batch size must be >= 1");
  if (total_steps < 1) throw InvalidConfig("train: total steps must be >= 1");
  if (early_stop_tolerance < 1) throw InvalidConfig("train: tolerance must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw InvalidConfig("train: validation fraction must lie in (0, 1)");
  }
  if (!(lr.scale > 0.0) || !std::isfinite(lr.scale)) throw InvalidConfig("train: bad step size");
}

namespace {

class SgdStepper {
 public:
  SgdStepper(const LabeledDataset& data, const TrainConfig& config)
      : data_(data), config_(config), rng_(config.seed), all_(data.size()) {
    std::iota(all_.begin(), all_.end(), std::size_t{0});
  }

  // One update; returns the batch loss measured before the update.
  double step(MlpClassifier& model, std::size_t t) {
    batch_.clear();
    std::sample(all_.begin(), all_.end(), std::back_inserter(batch_), config_.batch_size, rng_);
    const Tensor2 x = gather_rows(data_.points, batch_);
    labels_.clear();
    for (std::size_t i : batch_) labels_.push_back(data_.labels[i]);

    auto lg = backward(model, x, labels_, GradientParts::parameters);
    if (!std::isfinite(lg.mean_loss)) throw TrainingFailure("sgd: non-finite training loss");
    const double eta = config_.lr.at(t);
    auto& layers = model.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& w = layers[l].weight.data;
      const auto& gw = lg.grads.layers[l].weight.data;
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= eta * gw[j];
      auto& b = layers[l].bias;
      const auto& gb = lg.grads.layers[l].bias;
      for (std::size_t j = 0; j < b.size(); ++j) b[j] -= eta * gb[j];
    }
    return lg.mean_loss;
  }

 private:
  const LabeledDataset& data_;
  const TrainConfig& config_;
  Rng rng_;
  std::vector<std::size_t> all_;
  std::vector<std::size_t> batch_;
  std::vector<ClassIndex> labels_;
};

void check_inputs(const MlpClassifier& model, const LabeledDataset& data, const TrainConfig& c) {
  c.validate();
  data.validate();
  if (data.size() == 0) throw InvalidInput("train: empty dataset");
  if (data.dim() != model.input_dim()) throw InvalidInput("train: data dim != model input dim");
  if (data.num_classes > model.output_dim()) throw InvalidInput("train: too many classes");
}

}  // namespace

TrainResult sgd_train(MlpClassifier model, const LabeledDataset& data, const TrainConfig& config) {
  check_inputs(model, data, config);
  if (config.batch_size > data.size()) throw InvalidConfig("sgd: batch size exceeds dataset size");
  TrainResult out;
  out.loss_trace.reserve(config.total_steps);
  SgdStepper stepper(data, config);
  for (std::size_t t = 1; t <= config.total_steps; ++t) {
    out.loss_trace.push_back(stepper.step(model, t));
  }
  out.best_step = config.total_steps;
  out.model = std::move(model);
  return out;
}

Split validation_split(std::size_t n, double fraction, std::uint64_t seed) {
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (n_val < 1 || n_val >= n) throw InvalidConfig("early stop: degenerate validation split");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "validation-split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  Split s;
  s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

TrainResult early_stop_train(MlpClassifier model, const LabeledDataset& data,
                             const TrainConfig& config) {
  check_inputs(model, data, config);
  const Split split = validation_split(data.size(), config.validation_fraction, config.seed);
  const LabeledDataset train = data.subset(split.train);
  const LabeledDataset val = data.subset(split.validation);
  if (config.batch_size > train.size()) {
    throw InvalidConfig("early stop: batch size exceeds training split");
  }
  const std::size_t eval_every = (train.size() + config.batch_size - 1) / config.batch_size;

  TrainResult out;
  auto evaluate = [&](const MlpClassifier& m) {
    const double v = mean_loss(m, val.points, val.labels);
    if (!std::isfinite(v)) throw TrainingFailure("early stop: non-finite validation loss");
    out.validation_trace.push_back(v);
    return v;
  };

  MlpClassifier best = model;
  double best_val = evaluate(model);
  std::size_t best_step = 0;
  std::size_t stale = 0;

  SgdStepper stepper(train, config);
  for (std::size_t t = 1; t <= config.total_steps; ++t) {
    out.loss_trace.push_back(stepper.step(model, t));
    if (t % eval_every != 0 && t != config.total_steps) continue;
    const double v = evaluate(model);
    if (v < best_val) {
      best_val = v;
      best = model;
      best_step = t;
      stale = 0;
    } else if (++stale >= config.early_stop_tolerance) {
      break;
    }
  }
  out.model = std::move(best);
  out.best_step = best_step;
  return out;
}

}  // namespace esma
