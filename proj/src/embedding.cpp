#include "esma/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "esma/errors.hpp"
#include "esma/rng.hpp"
#include "esma/textio.hpp"

namespace esma {

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

double EmbeddingTable::max_norm() const {
  double m = 0.0;
  for (std::size_t k = 0; k < num_classes(); ++k) m = std::max(m, norm2(row(k)));
  return m;
}

EmbeddingTable init_embeddings(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1) throw InvalidInput("init_embeddings: empty table");
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  EmbeddingTable t;
  t.rows = Tensor2(num_classes, dim);
  for (double& v : t.rows.data) v = n(rng);
  return t;
}

PrototypeSet class_prototypes(const MlpClassifier& model, const LabeledDataset& data) {
  data.validate();
  const Tensor2 logits = forward(model, data.points);
  PrototypeSet s;
  s.means = Tensor2(data.num_classes, logits.cols);
  std::vector<std::size_t> counts(data.num_classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ClassIndex y = data.labels[i];
    counts[y]++;
    for (std::size_t c = 0; c < logits.cols; ++c) s.means(y, c) += logits(i, c);
  }
  for (ClassIndex k = 0; k < data.num_classes; ++k) {
    if (counts[k] == 0) throw InvalidInput("class_prototypes: class has no samples");
    for (std::size_t c = 0; c < logits.cols; ++c) s.means(k, c) /= static_cast<double>(counts[k]);
  }
  return s;
}

PairwiseMatrices pairwise_matrices(const Tensor2& v) {
  const std::size_t m = v.rows;
  if (m < 2) throw InvalidInput("pairwise_matrices: need at least two vectors");
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    norms[i] = norm2(v.row(i));
    if (norms[i] == 0.0) throw InvalidInput("pairwise_matrices: zero vector has no cosine");
  }
  PairwiseMatrices out{Tensor2(m, m), Tensor2(m, m)};
  for (std::size_t i = 0; i < m; ++i) {
    out.cosine(i, i) = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      double d2 = 0.0, dot = 0.0;
      for (std::size_t c = 0; c < v.cols; ++c) {
        const double diff = v(i, c) - v(j, c);
        d2 += diff * diff;
        dot += v(i, c) * v(j, c);
      }
      const double d = std::sqrt(d2);
      const double cs = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      out.euclidean(i, j) = out.euclidean(j, i) = d;
      out.cosine(i, j) = out.cosine(j, i) = cs;
    }
  }
  return out;
}

Tensor2 row_softmax(const Tensor2& m) {
  Tensor2 out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const auto r = m.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      out(i, j) = std::exp(r[j] - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) /= z;
  }
  return out;
}

double symmetric_kl(const Tensor2& p, const Tensor2& q) {
  if (p.rows != q.rows || p.cols != q.cols) throw InvalidInput("symmetric_kl: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double lr = std::log(p.data[i] / q.data[i]);
    s += (p.data[i] - q.data[i]) * lr;
  }
  return s;
}

namespace {

// dL/dM for L = symmetric_kl(S, softmax_rows(M)) given P = softmax_rows(M).
Tensor2 symmetric_kl_grad_logits(const Tensor2& s, const Tensor2& p) {
  Tensor2 g(p.rows, p.cols);
  for (std::size_t i = 0; i < p.rows; ++i) {
    double inner = 0.0;
    std::vector<double> dp(p.cols);
    for (std::size_t j = 0; j < p.cols; ++j) {
      dp[j] = -s(i, j) / p(i, j) + std::log(p(i, j) / s(i, j)) + 1.0;
      inner += p(i, j) * dp[j];
    }
    for (std::size_t j = 0; j < p.cols; ++j) g(i, j) = p(i, j) * (dp[j] - inner);
  }
  return g;
}

}  // namespace

ManifoldLoss manifold_loss(const EmbeddingTable& table, const PrototypeSet& prototypes,
                           double lambda1, double lambda2) {
  const std::size_t k = table.num_classes();
  if (k < 2) throw InvalidInput("manifold_loss: need at least two classes");
  if (prototypes.num_classes() != k) throw InvalidInput("manifold_loss: class count mismatch");
  const Tensor2& e = table.rows;
  const std::size_t d = table.dim();

  const auto sm = pairwise_matrices(prototypes.means);
  const auto em = pairwise_matrices(e);  // rejects zero embeddings
  const Tensor2 s_euc = row_softmax(sm.euclidean);
  const Tensor2 s_cos = row_softmax(sm.cosine);
  const Tensor2 p_euc = row_softmax(em.euclidean);
  const Tensor2 p_cos = row_softmax(em.cosine);

  ManifoldLoss out;
  out.euclidean_term = symmetric_kl(s_euc, p_euc);
  out.cosine_term = symmetric_kl(s_cos, p_cos);
  std::vector<double> norms(k);
  for (std::size_t i = 0; i < k; ++i) {
    norms[i] = norm2(e.row(i));
    out.norm_term += norms[i];
  }
  out.value = out.euclidean_term + lambda1 * out.cosine_term + lambda2 * out.norm_term;

  const Tensor2 g_euc = symmetric_kl_grad_logits(s_euc, p_euc);
  Tensor2 g_cos = symmetric_kl_grad_logits(s_cos, p_cos);
  for (double& v : g_cos.data) v *= lambda1;

  out.grad = Tensor2(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;  // diagonals are constants
      const double dist = em.euclidean(i, j);
      if (dist > 0.0) {
        const double c = g_euc(i, j) / dist;
        for (std::size_t a = 0; a < d; ++a) {
          const double diff = e(i, a) - e(j, a);
          out.grad(i, a) += c * diff;
          out.grad(j, a) -= c * diff;
        }
      }
      const double gc = g_cos(i, j);
      const double cs = em.cosine(i, j);
      const double inv = 1.0 / (norms[i] * norms[j]);
      for (std::size_t a = 0; a < d; ++a) {
        out.grad(i, a) += gc * (e(j, a) * inv - cs * e(i, a) / (norms[i] * norms[i]));
        out.grad(j, a) += gc * (e(i, a) * inv - cs * e(j, a) / (norms[j] * norms[j]));
      }
    }
    for (std::size_t a = 0; a < d; ++a) out.grad(i, a) += lambda2 * e(i, a) / norms[i];
  }
  return out;
}

CollapseCheck collapse_check(const EmbeddingTable& table, std::size_t step) {
  const auto em = pairwise_matrices(table.rows);
  const Tensor2 p = row_softmax(em.euclidean);
  CollapseCheck c;
  c.step = step;
  c.min_entry = *std::min_element(p.data.begin(), p.data.end());
  c.floor = 1.0 / (static_cast<double>(table.num_classes()) * std::exp(2.0 * table.max_norm()));
  return c;
}

PretrainResult pretrain_embeddings(EmbeddingTable init, const PrototypeSet& prototypes,
                                   const PretrainConfig& config) {
  if (init.frozen) throw InvalidInput("pretrain_embeddings: table is frozen");
  PretrainResult out;
  EmbeddingTable& table = init;
  AdamW opt(table.rows.data.size(), config.optimizer);
  const std::size_t every = std::max<std::size_t>(config.guard_every, 1);

  auto loss = manifold_loss(table, prototypes, config.lambda1, config.lambda2);
  out.loss_trace.push_back(loss.value);
  out.checks.push_back(collapse_check(table, 0));
  for (std::size_t t = 1; t <= config.steps; ++t) {
    opt.step(table.rows.data, loss.grad.data);
    loss = manifold_loss(table, prototypes, config.lambda1, config.lambda2);
    if (!std::isfinite(loss.value)) throw TrainingFailure("pretrain_embeddings: loss diverged");
    out.loss_trace.push_back(loss.value);
    if (t % every == 0 || t == config.steps) out.checks.push_back(collapse_check(table, t));
  }
  table.frozen = true;
  out.table = std::move(table);
  return out;
}

double mean_offdiagonal_cosine(const Tensor2& vectors) {
  const auto pm = pairwise_matrices(vectors);
  const std::size_t m = vectors.rows;
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) s += pm.cosine(i, j);
    }
  }
  return s / static_cast<double>(m * (m - 1));
}

void save_embeddings(std::ostream& os, const EmbeddingTable& table) {
  os << "esma-embedding 1\n";
  os << "classes " << table.num_classes() << " dim " << table.dim() << " frozen "
     << (table.frozen ? 1 : 0) << '\n';
  for (std::size_t k = 0; k < table.num_classes(); ++k) write_values(os, table.row(k));
}

EmbeddingTable load_embeddings(std::istream& is) {
  TokenReader r(is);
  r.expect("esma-embedding");
  if (r.count() != 1) throw FormatError("esma-embedding: unsupported version");
  r.expect("classes");
  const std::size_t k = r.count();
  r.expect("dim");
  const std::size_t d = r.count();
  r.expect("frozen");
  const std::size_t frozen = r.count();
  EmbeddingTable t;
  t.rows = Tensor2(k, d, r.reals(k * d));
  t.frozen = frozen != 0;
  return t;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  save_embeddings(os, table);
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return load_embeddings(is);
}

}  // namespace esma
