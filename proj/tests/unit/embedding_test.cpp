#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "esma/embedding.hpp"
#include "esma/errors.hpp"
#include "helpers.hpp"

using namespace esma;
using namespace esma::testing;

namespace {

PrototypeSet random_prototypes(std::size_t k, Rng& rng) { return {random_tensor(k, k, rng, -3, 3)}; }

EmbeddingTable random_table(std::size_t k, std::size_t d, Rng& rng) {
  return {random_tensor(k, d, rng, -1, 1), false};
}

}  // namespace

TEST(Prototypes, SingleAndPair) {
  LabeledDataset data{Tensor2(3, 2, {0.1, 0.2, -1, 0.5, 0.7, -0.3}), {0, 1, 1}, 2};
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 5, 2}, 3);
  const auto p = class_prototypes(m, data);
  const auto z0 = forward_point(m, data.points.row(0));
  const auto z1 = forward_point(m, data.points.row(1));
  const auto z2 = forward_point(m, data.points.row(2));
  EXPECT_EQ(p.means(0, 0), z0[0]);
  EXPECT_EQ(p.means(0, 1), z0[1]);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(p.means(1, c), (z1[c] + z2[c]) / 2, 1e-15);
}

TEST(Prototypes, BruteForce) {
  Rng rng(2);
  const auto data = random_dataset(90, 2, 3, rng);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 7, 3}, 1);
  const auto p = class_prototypes(m, data);
  for (ClassIndex k = 0; k < 3; ++k) {
    std::vector<double> s(3);
    double n = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.labels[i] != k) continue;
      const auto z = reference_forward(m, {data.points.row(i).begin(), data.points.row(i).end()});
      for (std::size_t c = 0; c < 3; ++c) s[c] += z[c];
      n += 1;
    }
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(p.means(k, c), s[c] / n, 1e-12);
  }
  LabeledDataset missing{Tensor2(2, 2), {0, 0}, 2};
  EXPECT_THROW(class_prototypes(m, missing), InvalidInput);
}

TEST(Pairwise, IdenticalVectors) {
  const auto pm = pairwise_matrices(Tensor2(3, 2, {1, 2, 1, 2, 1, 2}));
  for (double v : pm.euclidean.data) EXPECT_EQ(v, 0.0);
  for (double v : pm.cosine.data) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Pairwise, OrthonormalPair) {
  const auto pm = pairwise_matrices(Tensor2(2, 2, {1, 0, 0, 1}));
  EXPECT_NEAR(pm.euclidean(0, 1), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(pm.cosine(0, 1), 0.0);
}

TEST(Pairwise, DoubleLoop) {
  Rng rng(3);
  const auto v = random_tensor(6, 5, rng);
  const auto pm = pairwise_matrices(v);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double d2 = 0, dot = 0, ni = 0, nj = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        d2 += (v(i, c) - v(j, c)) * (v(i, c) - v(j, c));
        dot += v(i, c) * v(j, c);
        ni += v(i, c) * v(i, c);
        nj += v(j, c) * v(j, c);
      }
      EXPECT_NEAR(pm.euclidean(i, j), std::sqrt(d2), 1e-12);
      EXPECT_NEAR(pm.cosine(i, j), dot / std::sqrt(ni * nj), 1e-12);
      EXPECT_EQ(pm.euclidean(i, j), pm.euclidean(j, i));
    }
  EXPECT_THROW(pairwise_matrices(Tensor2(2, 2, {1, 1, 0, 0})), InvalidInput);
  EXPECT_THROW(pairwise_matrices(Tensor2(1, 2, {1, 1})), InvalidInput);
}

TEST(RowSoftmax, Properties) {
  const auto u = row_softmax(Tensor2(1, 4, 3.0));
  for (double v : u.data) EXPECT_DOUBLE_EQ(v, 0.25);
  Rng rng(5);
  auto m = random_tensor(5, 5, rng, -20, 20);
  const auto p = row_softmax(m);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (double v : p.row(i)) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  for (auto& v : m.row(2)) v += 7.5;
  const auto q = row_softmax(m);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(q(2, j), p(2, j), 1e-15);
}

TEST(ManifoldLoss, MatchingStructure) {
  Rng rng(6);
  const auto protos = random_prototypes(4, rng);
  const EmbeddingTable e{protos.means, false};
  const auto l = manifold_loss(e, protos, 5.0, 0.01);
  EXPECT_NEAR(l.euclidean_term, 0.0, 1e-14);
  EXPECT_NEAR(l.cosine_term, 0.0, 1e-14);
  double norms = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    double s = 0;
    for (double v : e.rows.row(k)) s += v * v;
    norms += std::sqrt(s);
  }
  EXPECT_NEAR(l.value, 0.01 * norms, 1e-14);
  EXPECT_NEAR(manifold_loss(e, protos, 5.0, 0.0).value, 0.0, 1e-13);
}

TEST(ManifoldLoss, NonNegativeBlocks) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const auto l = manifold_loss(random_table(5, 6, rng), random_prototypes(5, rng), 5.0, 0.01);
    EXPECT_GE(l.euclidean_term, 0.0);
    EXPECT_GE(l.cosine_term, 0.0);
  }
}

TEST(ManifoldLoss, FiniteDifferences) {
  Rng rng(8);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    auto e = random_table(4, 8, rng);
    const auto protos = random_prototypes(4, rng);
    const auto l = manifold_loss(e, protos, 5.0, 0.01);
    auto f = [&] { return manifold_loss(e, protos, 5.0, 0.01).value; };
    for (std::size_t j = 0; j < e.rows.data.size(); ++j) {
      const double fd = central_difference(f, e.rows.data[j]);
      worst = std::max(worst, rel_error(l.grad.data[j], fd));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(ManifoldLoss, RejectsZeroEmbedding) {
  Rng rng(1);
  EmbeddingTable e{Tensor2(3, 4, 0.5), false};
  for (auto& v : e.rows.row(1)) v = 0.0;
  EXPECT_THROW(manifold_loss(e, random_prototypes(3, rng), 5.0, 0.01), InvalidInput);
}

TEST(Pretrain, ZeroStepsUnchanged) {
  Rng rng(9);
  const auto init = init_embeddings(4, 6, 3);
  PretrainConfig c;
  c.steps = 0;
  const auto r = pretrain_embeddings(init, random_prototypes(4, rng), c);
  EXPECT_EQ(r.table.rows, init.rows);
  EXPECT_TRUE(r.table.frozen);
  EXPECT_EQ(r.loss_trace.size(), 1u);
  EXPECT_THROW(pretrain_embeddings(r.table, random_prototypes(4, rng), c), InvalidInput);
}

TEST(Pretrain, LossDecreasesAndGuardHolds) {
  Rng rng(10);
  const auto protos = random_prototypes(10, rng);
  PretrainConfig c;
  c.steps = 2000;
  const auto r = pretrain_embeddings(init_embeddings(10, 32, 4), protos, c);
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
  ASSERT_EQ(r.checks.front().step, 0u);
  ASSERT_EQ(r.checks.back().step, 2000u);
  for (const auto& ck : r.checks) EXPECT_TRUE(ck.holds()) << "step " << ck.step;
}

TEST(Pretrain, SpreadsClusteredInit) {
  Rng rng(11);
  const auto protos = random_prototypes(10, rng);
  auto base = random_tensor(1, 32, rng, -0.2, 0.2);
  std::normal_distribution<double> noise(0.0, 1e-3);
  EmbeddingTable init{Tensor2(10, 32), false};
  for (std::size_t k = 0; k < 10; ++k)
    for (std::size_t c = 0; c < 32; ++c) init.rows(k, c) = base(0, c) + noise(rng);
  PretrainConfig cfg;
  cfg.steps = 2000;
  const auto r = pretrain_embeddings(init, protos, cfg);
  EXPECT_LT(mean_offdiagonal_cosine(r.table.rows), mean_offdiagonal_cosine(init.rows));
}

TEST(Embeddings, TextRoundTrip) {
  auto t = init_embeddings(5, 7, 12);
  t.frozen = true;
  std::stringstream ss;
  save_embeddings(ss, t);
  EXPECT_EQ(load_embeddings(ss), t);
}

TEST(Embeddings, InitStatistics) {
  const auto t = init_embeddings(100, 100, 1);
  double s = 0, s2 = 0;
  for (double v : t.rows.data) {
    s += v;
    s2 += v * v;
  }
  const double n = 10000.0;
  EXPECT_NEAR(s / n, 0.0, 5 * 0.1 / 100.0);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.1, 0.005);
}
