#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "esma/checkpoint.hpp"
#include "esma/data.hpp"
#include "esma/errors.hpp"
#include "esma/loss.hpp"
#include "esma/mlp.hpp"
#include "esma/train.hpp"
#include "helpers.hpp"

using namespace esma;
using namespace esma::testing;

namespace {

MlpClassifier identity_layer(Activation act) {
  DenseLayer l{Tensor2(2, 2, {1, 0, 0, 1}), {0, 0}, act};
  if (act == Activation::identity) return MlpClassifier({l});
  DenseLayer out{Tensor2(2, 2, {1, 0, 0, 1}), {0, 0}, Activation::identity};
  return MlpClassifier({l, out});
}

MlpClassifier linear_model(std::size_t d, std::size_t k, Rng& rng) {
  DenseLayer l{random_tensor(k, d, rng), std::vector<double>(k), Activation::identity};
  for (auto& b : l.bias) b = std::uniform_real_distribution<double>(-1, 1)(rng);
  return MlpClassifier({l});
}

}  // namespace

TEST(Forward, IdentityLayer) {
  const auto m = identity_layer(Activation::identity);
  const auto z = forward(m, Tensor2(1, 2, {1, 2}));
  EXPECT_EQ(z.data, (std::vector<double>{1, 2}));
}

TEST(Forward, ReluLayer) {
  const auto m = identity_layer(Activation::relu);
  EXPECT_EQ(forward_point(m, std::vector<double>{-1, 3}), (std::vector<double>{0, 3}));
}

TEST(Forward, MatchesStraightLineEvaluation) {
  Rng rng(11);
  const std::vector<std::size_t> widths{3, 7, 4};
  const auto m = MlpClassifier::initialize(widths, 5);
  const auto x = random_tensor(20, 3, rng);
  const auto z = forward(m, x);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto ref = reference_forward(m, {x.row(i).begin(), x.row(i).end()});
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(z(i, k), ref[k], 1e-12);
  }
}

TEST(Forward, RejectsWrongDimension) {
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{3, 4, 2}, 0);
  EXPECT_THROW(forward(m, Tensor2(2, 4)), InvalidInput);
}

TEST(Softmax, Simplex) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto z = random_tensor(1, 6, rng, -30, 30);
    const auto p = softmax(z.data);
    double s = 0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(SoftmaxCe, UniformLogits) {
  EXPECT_NEAR(softmax_ce(std::vector<double>{0, 0}, 0), std::log(2.0), 1e-15);
}

TEST(SoftmaxCe, ShiftInvariance) {
  const std::vector<double> z{0.3, -1.2, 2.0};
  const std::vector<double> shifted{1000.3, 998.8, 1002.0};
  for (ClassIndex y = 0; y < 3; ++y) EXPECT_NEAR(softmax_ce(z, y), softmax_ce(shifted, y), 1e-9);
}

TEST(SoftmaxCe, LargeMarginAgainstLog1p) {
  // ln(1 + e^-10) via log1p, accurate to a few ulp
  const double expected = std::log1p(std::exp(-10.0));
  EXPECT_NEAR(softmax_ce(std::vector<double>{10, 0}, 0), expected, 1e-15);
}

TEST(SoftmaxCe, BadLabel) {
  EXPECT_THROW(softmax_ce(std::vector<double>{0, 0}, 2), InvalidInput);
}

TEST(Backward, LinearModelInputGradient) {
  Rng rng(8);
  const auto m = linear_model(3, 4, rng);
  const auto x = random_tensor(5, 3, rng);
  std::vector<ClassIndex> y{0, 1, 2, 3, 1};
  const auto lg = backward(m, x, y, GradientParts::inputs);
  const auto& w = m.layers()[0].weight;
  for (std::size_t i = 0; i < 5; ++i) {
    auto z = m.layers()[0].bias;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < 3; ++j) z[k] += w(k, j) * x(i, j);
    double zmax = *std::max_element(z.begin(), z.end());
    double s = 0;
    for (double v : z) s += std::exp(v - zmax);
    for (std::size_t j = 0; j < 3; ++j) {
      double g = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        const double p = std::exp(z[k] - zmax) / s - (k == y[i] ? 1.0 : 0.0);
        g += p * w(k, j);
      }
      EXPECT_NEAR(lg.grads.input(i, j), g, 1e-12);
    }
  }
}

TEST(Backward, FiniteDifferences) {
  Rng rng(21);
  const std::vector<std::vector<std::size_t>> shapes{{2, 2}, {2, 5, 3}, {3, 6, 4, 2}, {4, 8, 8, 8, 3}};
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto& widths = shapes[inst % shapes.size()];
    auto m = MlpClassifier::initialize(widths, 100 + inst);
    for (auto& l : m.layers())
      for (auto& b : l.bias) b = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    auto x = random_tensor(3, widths.front(), rng, -2, 2);
    std::vector<ClassIndex> y;
    for (std::size_t i = 0; i < 3; ++i) y.push_back(rng() % widths.back());
    const auto lg = backward(m, x, y, GradientParts::both);
    auto f = [&] { return mean_loss(m, x, y); };
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
      auto& layer = m.layers()[l];
      for (std::size_t j = 0; j < layer.weight.data.size(); ++j) {
        const double fd = central_difference(f, layer.weight.data[j]);
        worst = std::max(worst, rel_error(lg.grads.layers[l].weight.data[j], fd));
      }
      for (std::size_t j = 0; j < layer.bias.size(); ++j) {
        const double fd = central_difference(f, layer.bias[j]);
        worst = std::max(worst, rel_error(lg.grads.layers[l].bias[j], fd));
      }
    }
    // per-row input gradient is of the row's own loss, so scale the mean by n
    for (std::size_t j = 0; j < x.data.size(); ++j) {
      const double fd = 3.0 * central_difference(f, x.data[j]);
      worst = std::max(worst, rel_error(lg.grads.input.data[j], fd));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Backward, DuplicatedBatchSameMeanGradient) {
  Rng rng(4);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 6, 3}, 9);
  const auto x = random_tensor(4, 2, rng);
  const std::vector<ClassIndex> y{0, 2, 1, 1};
  Tensor2 xx(8, 2);
  std::vector<ClassIndex> yy;
  for (std::size_t i = 0; i < 8; ++i) {
    xx(i, 0) = x(i % 4, 0);
    xx(i, 1) = x(i % 4, 1);
    yy.push_back(y[i % 4]);
  }
  const auto a = backward(m, x, y);
  const auto b = backward(m, xx, yy);
  EXPECT_NEAR(a.mean_loss, b.mean_loss, 1e-14);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t j = 0; j < a.grads.layers[l].weight.data.size(); ++j)
      EXPECT_NEAR(a.grads.layers[l].weight.data[j], b.grads.layers[l].weight.data[j], 1e-14);
}

TEST(InputGradient, MatchesBackward) {
  Rng rng(5);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 9, 3}, 2);
  const auto x = random_tensor(1, 2, rng);
  const auto z = forward_point(m, x.data);
  const auto d = softmax_ce_grad(z, 1);
  const auto g = input_gradient(m, x.data, d);
  const auto lg = backward(m, x, std::vector<ClassIndex>{1}, GradientParts::inputs);
  EXPECT_NEAR(g[0], lg.grads.input(0, 0), 1e-14);
  EXPECT_NEAR(g[1], lg.grads.input(0, 1), 1e-14);
}

TEST(Sgd, ZeroGradientFixedPoint) {
  LabeledDataset data{Tensor2(4, 2, 0.0), {0, 1, 0, 1}, 2};
  const MlpClassifier m({DenseLayer{Tensor2(2, 2, 0.0), {0, 0}, Activation::identity}});
  TrainConfig c{4, 25, LearningRate::constant(0.3), 30, 1, 0.2};
  const auto r = sgd_train(m, data, c);
  EXPECT_EQ(r.model, m);
  EXPECT_EQ(r.loss_trace.size(), 25u);
}

TEST(Sgd, FullBatchStepMatchesGradientDescent) {
  Rng rng(31);
  const auto m = linear_model(2, 3, rng);
  const auto data = random_dataset(12, 2, 3, rng);
  const double eta = 0.7;
  TrainConfig c{12, 1, LearningRate::constant(eta), 30, 4, 0.2};
  const auto r = sgd_train(m, data, c);

  const auto& w = m.layers()[0].weight;
  const auto& b = m.layers()[0].bias;
  Tensor2 gw(3, 2);
  std::vector<double> gb(3);
  for (std::size_t i = 0; i < 12; ++i) {
    std::vector<double> z(3);
    for (std::size_t k = 0; k < 3; ++k) z[k] = w(k, 0) * data.points(i, 0) + w(k, 1) * data.points(i, 1) + b[k];
    const double zmax = *std::max_element(z.begin(), z.end());
    double s = 0;
    for (double v : z) s += std::exp(v - zmax);
    for (std::size_t k = 0; k < 3; ++k) {
      const double p = std::exp(z[k] - zmax) / s - (k == data.labels[i] ? 1.0 : 0.0);
      gw(k, 0) += p * data.points(i, 0) / 12.0;
      gw(k, 1) += p * data.points(i, 1) / 12.0;
      gb[k] += p / 12.0;
    }
  }
  const auto& got = r.model.layers()[0];
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(got.weight.data[j], w.data[j] - eta * gw.data[j], 1e-10);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(got.bias[k], b[k] - eta * gb[k], 1e-10);
}

TEST(Sgd, SmallStepLossNonIncreasing) {
  Rng rng(2);
  LabeledDataset data{Tensor2(40, 1), {}, 2};
  std::normal_distribution<double> n(0, 1);
  for (std::size_t i = 0; i < 40; ++i) {
    data.labels.push_back(i % 2);
    data.points(i, 0) = (i % 2 ? 1.0 : -1.0) + n(rng);
  }
  const MlpClassifier m({DenseLayer{Tensor2(2, 1, {0.3, -0.2}), {0, 0}, Activation::identity}});
  const auto r = sgd_train(m, data, TrainConfig{40, 200, LearningRate::constant(0.05), 30, 0, 0.2});
  for (std::size_t t = 1; t < r.loss_trace.size(); ++t) EXPECT_LE(r.loss_trace[t], r.loss_trace[t - 1]);
}

TEST(Sgd, Deterministic) {
  Rng rng(1);
  const auto data = random_dataset(50, 2, 2, rng);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 8, 2}, 3);
  TrainConfig c{8, 40, LearningRate::inverse_sqrt(0.1), 30, 77, 0.2};
  const auto a = sgd_train(m, data, c);
  const auto b = sgd_train(m, data, c);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.model, b.model);
}

TEST(Sgd, RejectsOversizedBatch) {
  Rng rng(1);
  const auto data = random_dataset(5, 2, 2, rng);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 2}, 3);
  EXPECT_THROW(sgd_train(m, data, TrainConfig{6, 1, {}, 30, 0, 0.2}), InvalidConfig);
}

TEST(EarlyStop, ImmediateStopReturnsInitial) {
  Rng rng(6);
  const auto data = random_dataset(60, 2, 2, rng);
  const MlpClassifier m({DenseLayer{Tensor2(2, 2, 0.0), {0, 0}, Activation::identity}});
  TrainConfig c{8, 500, LearningRate::constant(50.0), 1, 3, 0.25};
  const auto r = early_stop_train(m, data, c);
  ASSERT_GE(r.validation_trace.size(), 2u);
  ASSERT_GT(r.validation_trace[1], r.validation_trace[0]);
  EXPECT_EQ(r.validation_trace.size(), 2u);
  EXPECT_EQ(r.best_step, 0u);
  EXPECT_EQ(r.model, m);
}

TEST(EarlyStop, NoStopMatchesSgdOnTrainingSplit) {
  Rng rng(7);
  const auto data = random_dataset(50, 2, 2, rng);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 6, 2}, 1);
  TrainConfig c{8, 60, LearningRate::inverse_sqrt(0.3), 1000, 5, 0.2};
  const auto es = early_stop_train(m, data, c);
  const auto split = validation_split(50, 0.2, 5);
  const auto train = data.subset(split.train);
  const auto val = data.subset(split.validation);
  const auto full = sgd_train(m, train, c);
  EXPECT_EQ(es.loss_trace, full.loss_trace);

  // replay and keep the best evaluated checkpoint
  const std::size_t every = (train.size() + 7) / 8;
  MlpClassifier best = m;
  double best_val = mean_loss(m, val.points, val.labels);
  for (std::size_t t = every; t <= 60; t += every) {
    auto cc = c;
    cc.total_steps = t;
    const auto partial = sgd_train(m, train, cc).model;
    const double v = mean_loss(partial, val.points, val.labels);
    if (v < best_val) {
      best_val = v;
      best = partial;
    }
  }
  if (60 % every != 0) {
    const double v = mean_loss(full.model, val.points, val.labels);
    if (v < best_val) best = full.model;
  }
  EXPECT_EQ(es.model, best);
}

TEST(EarlyStop, BestNoWorseThanFinal) {
  const auto data = gen_gaussian_mixture(GaussianMixtureSpec::two_gaussians(1.5, 200, 3));
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 20, 20, 2}, 4);
  TrainConfig c{32, 3000, LearningRate::inverse_sqrt(0.5), 30, 9, 0.2};
  const auto r = early_stop_train(m, data, c);
  const double best = *std::min_element(r.validation_trace.begin(), r.validation_trace.end());
  const auto split = validation_split(data.size(), 0.2, 9);
  const auto val = data.subset(split.validation);
  EXPECT_EQ(mean_loss(r.model, val.points, val.labels), best);
  EXPECT_LE(best, r.validation_trace.back());
}

TEST(EarlyStop, DegenerateSplit) {
  Rng rng(1);
  const auto data = random_dataset(3, 2, 2, rng);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 2}, 3);
  EXPECT_THROW(early_stop_train(m, data, TrainConfig{1, 5, {}, 3, 0, 0.2}), InvalidConfig);
}

TEST(Checkpoint, RoundTripBitExact) {
  auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 13, 7, 3}, 42);
  m.layers()[0].bias[3] = 1.0 / 3.0;
  m.layers()[1].weight.data[0] = -5e-300;
  std::stringstream ss;
  save_model(ss, m);
  EXPECT_EQ(load_model(ss), m);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream ss("esma-mlp 1\nlayers 1\nlayer 2 2 relu\n1 2 3\n");
  EXPECT_THROW(load_model(ss), FormatError);
}
