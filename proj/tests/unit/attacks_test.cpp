#include <gtest/gtest.h>

#include <cmath>

#include "esma/attacks.hpp"
#include "esma/data.hpp"
#include "esma/errors.hpp"
#include "esma/loss.hpp"
#include "esma/train.hpp"
#include "helpers.hpp"

using namespace esma;
using namespace esma::testing;

namespace {

MlpClassifier toy_model(std::uint64_t seed, std::vector<std::size_t> hidden) {
  const auto data = gen_gaussian_mixture(GaussianMixtureSpec::two_gaussians(1.5, 200, seed));
  std::vector<std::size_t> widths{2};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(2);
  return early_stop_train(MlpClassifier::initialize(widths, seed + 10), data,
                          TrainConfig{32, 3000, LearningRate::inverse_sqrt(0.5), 30, seed, 0.2})
      .model;
}

}  // namespace

TEST(Projection, InsideUnchanged) {
  const std::vector<double> x{0.2, 0.5}, adv{0.25, 0.45};
  EXPECT_EQ(project_linf(adv, x, 0.1, DataRange::unit()), adv);
}

TEST(Projection, BoxClamp) {
  const std::vector<double> x{0.2, -0.5}, adv{0.2 + 2 * 0.3, -0.5 + 2 * 0.3};
  const auto p = project_linf(adv, x, 0.3, DataRange::unbounded());
  EXPECT_EQ(p[0], 0.2 + 0.3);
  EXPECT_EQ(p[1], -0.5 + 0.3);
  const auto r = project_linf(adv, x, 0.3, DataRange::unit());
  EXPECT_EQ(r[0], 0.5);
  EXPECT_EQ(r[1], 0.0);
}

TEST(Projection, Idempotent) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_tensor(1, 5, rng);
    const auto a = random_tensor(1, 5, rng, -3, 3);
    const auto once = project_linf(a.data, x.data, 0.37, {-0.8, 0.9});
    EXPECT_EQ(project_linf(once, x.data, 0.37, {-0.8, 0.9}), once);
  }
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  c.epsilon = -0.1;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c.epsilon = 0.0;
  EXPECT_NO_THROW(c.validate());
  c.steps = 0;
  EXPECT_THROW(c.validate(), InvalidConfig);
}

TEST(Attack, MissingAnchorRejected) {
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 4, 2}, 1);
  AttackConfig c;
  c.loss = AttackLoss::anchor_sq;
  EXPECT_THROW(momentum_iterative_attack(m, std::vector<double>{0, 0}, 1, {}, c), InvalidConfig);
}

TEST(Attack, ZeroBudgetIsIdentity) {
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 8, 2}, 2);
  const std::vector<double> x{0.3, -0.7};
  AttackConfig c;
  c.epsilon = 0.0;
  c.loss = AttackLoss::ce_targeted;
  const auto r = momentum_iterative_attack(m, x, 1, {}, c);
  EXPECT_EQ(r.adversarial, x);
  EXPECT_EQ(r.objective_trace.size(), c.steps + 1);
}

TEST(Attack, LinearSurrogateSignStep) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const MlpClassifier m({DenseLayer{random_tensor(3, 4, rng), {0.1, -0.2, 0.3}, Activation::identity}});
    const auto x = random_tensor(1, 4, rng);
    const std::vector<double> anchor{1.0, -2.0, 0.5};
    AttackConfig c;
    c.epsilon = 10.0;
    c.steps = 1;
    c.step_size = 0.01;
    c.loss = AttackLoss::anchor_sq;
    const auto r = momentum_iterative_attack(m, x.data, 2, anchor, c);
    // grad of ||Wx + b - a||^2 is 2 W^T (Wx + b - a)
    const auto& w = m.layers()[0].weight;
    std::vector<double> res(3);
    for (std::size_t k = 0; k < 3; ++k) {
      res[k] = m.layers()[0].bias[k] - anchor[k];
      for (std::size_t j = 0; j < 4; ++j) res[k] += w(k, j) * x(0, j);
    }
    for (std::size_t j = 0; j < 4; ++j) {
      double g = 0;
      for (std::size_t k = 0; k < 3; ++k) g += 2 * w(k, j) * res[k];
      const double expected = x(0, j) - 0.01 * (g > 0 ? 1.0 : -1.0);
      EXPECT_DOUBLE_EQ(r.adversarial[j], expected);
    }
  }
}

TEST(Attack, AnchorObjectiveMostlyDecreasing) {
  const auto m = toy_model(1, {50, 100, 150});
  const auto data = gen_gaussian_mixture(GaussianMixtureSpec::two_gaussians(1.5, 100, 77));
  const auto book = build_anchor_book(m, data, 10);
  AttackConfig c;
  c.epsilon = 0.5;
  c.loss = AttackLoss::anchor_sq;
  std::size_t down = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ClassIndex target = 1 - data.labels[i];
    const auto r = momentum_iterative_attack(m, data.points.row(i), target, book.anchors[target], c);
    for (std::size_t s = 1; s < r.objective_trace.size(); ++s) {
      down += r.objective_trace[s] <= r.objective_trace[s - 1];
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(down), 0.9 * static_cast<double>(total));
}

TEST(Attack, BudgetSoundAndWhiteBoxStrong) {
  const auto m = toy_model(2, {20, 20, 20});
  const auto data = gen_gaussian_mixture(GaussianMixtureSpec::two_gaussians(3.0, 100, 5));
  const auto requests = all_target_requests(data);
  ASSERT_EQ(requests.size(), data.size());
  AttackConfig c;
  c.epsilon = 8.0;
  c.steps = 40;
  c.loss = AttackLoss::ce_targeted;
  c.range = {-6.0, 6.0};
  const auto res = run_attack(m, data.points, requests, c, nullptr, nullptr, 0);
  for (std::size_t i = 0; i < requests.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_LE(std::abs(res.adversarial(i, j) - res.clean(i, j)), c.epsilon + 1e-9);
      EXPECT_GE(res.adversarial(i, j), -6.0 - 1e-9);
      EXPECT_LE(res.adversarial(i, j), 6.0 + 1e-9);
    }
  const std::vector<MlpClassifier> victims{m};
  EXPECT_GE(transfer_success_rate(victims, res)[0], 0.9);
}

TEST(Transfer, ZeroPerturbationIsBaseRate) {
  Rng rng(4);
  const auto data = random_dataset(60, 2, 3, rng);
  const auto requests = all_target_requests(data);
  AttackResult res;
  res.requests = requests;
  res.clean = Tensor2(requests.size(), 2);
  for (std::size_t i = 0; i < requests.size(); ++i) {
    res.clean(i, 0) = data.points(requests[i].sample_id, 0);
    res.clean(i, 1) = data.points(requests[i].sample_id, 1);
  }
  res.adversarial = res.clean;
  const std::vector<MlpClassifier> victims{MlpClassifier::initialize(std::vector<std::size_t>{2, 5, 3}, 1)};
  double hits = 0;
  for (std::size_t i = 0; i < requests.size(); ++i)
    hits += argmax(forward_point(victims[0], res.clean.row(i))) == requests[i].target;
  EXPECT_DOUBLE_EQ(transfer_success_rate(victims, res)[0], hits / static_cast<double>(requests.size()));
}

TEST(Transfer, InvariantToLogitScaling) {
  Rng rng(5);
  const auto data = random_dataset(40, 2, 3, rng);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 6, 3}, 2);
  AttackConfig c;
  c.epsilon = 0.3;
  c.loss = AttackLoss::ce_targeted;
  const auto res = run_attack(m, data.points, all_target_requests(data), c, nullptr, nullptr, 0);
  auto scaled = MlpClassifier::initialize(std::vector<std::size_t>{2, 4, 3}, 9);
  const std::vector<MlpClassifier> a{scaled};
  for (auto& w : scaled.layers().back().weight.data) w *= 3.5;
  for (auto& b : scaled.layers().back().bias) b *= 3.5;
  const std::vector<MlpClassifier> b{scaled};
  EXPECT_EQ(transfer_success_rate(a, res), transfer_success_rate(b, res));
}

TEST(Attack, RandomAnchorsReseeded) {
  Rng rng(6);
  const auto data = random_dataset(40, 2, 2, rng);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 6, 2}, 2);
  AttackConfig c;
  c.epsilon = 0.3;
  c.anchor_source = AnchorSource::random_member;
  const auto req = all_target_requests(data);
  const auto a = run_attack(m, data.points, req, c, nullptr, &data, 11);
  const auto b = run_attack(m, data.points, req, c, nullptr, &data, 11);
  EXPECT_EQ(a.adversarial, b.adversarial);
  EXPECT_THROW(run_attack(m, data.points, req, c, nullptr, nullptr, 11), InvalidConfig);
}
