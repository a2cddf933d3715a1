#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "esma/dataset.hpp"
#include "esma/mlp.hpp"
#include "esma/optim.hpp"
#include "esma/tensor.hpp"

namespace esma {

/// K class embeddings e_1..e_K in R^{d1}, one per row.
struct EmbeddingTable {
  Tensor2 rows;
  bool frozen = false;

  std::size_t num_classes() const { return rows.rows; }
  std::size_t dim() const { return rows.cols; }
  std::span<const double> row(ClassIndex k) const { return rows.row(k); }
  double max_norm() const;
  bool operator==(const EmbeddingTable&) const = default;
};

/// i.i.d. N(0, 0.1^2) entries.
EmbeddingTable init_embeddings(std::size_t num_classes, std::size_t dim, std::uint64_t seed);

/// Per-class mean logits mu_k (K x K, row k = mu_k).
struct PrototypeSet {
  Tensor2 means;
  std::size_t num_classes() const { return means.rows; }
};

/// Throws InvalidInput if some class has no samples.
PrototypeSet class_prototypes(const MlpClassifier& model, const LabeledDataset& data);

struct PairwiseMatrices {
  Tensor2 euclidean;  // ||v_i - v_j||, zero diagonal
  Tensor2 cosine;     // v_i . v_j / (||v_i|| ||v_j||), unit diagonal
};

/// Pairwise structure of the rows of `vectors`. Throws InvalidInput for fewer
/// than two rows or a zero row.
PairwiseMatrices pairwise_matrices(const Tensor2& vectors);

/// Row-wise max-stabilized softmax.
Tensor2 row_softmax(const Tensor2& m);

/// sum_ij p_ij log(p_ij / q_ij) + q_ij log(q_ij / p_ij) over row-stochastic matrices.
double symmetric_kl(const Tensor2& p, const Tensor2& q);

struct ManifoldLoss {
  double value = 0.0;
  double euclidean_term = 0.0;  // symmetric KL between row-softmaxed distance matrices
  double cosine_term = 0.0;     // symmetric KL between row-softmaxed cosine matrices
  double norm_term = 0.0;       // sum_k ||e_k||
  Tensor2 grad;                 // dL/dE, shaped like the table
};

/// euclidean_term + lambda1 * cosine_term + lambda2 * norm_term and its gradient.
ManifoldLoss manifold_loss(const EmbeddingTable& table, const PrototypeSet& prototypes,
                           double lambda1, double lambda2);

struct PretrainConfig {
  double lambda1 = 5.0;
  double lambda2 = 0.01;
  std::size_t steps = 15000;
  AdamWConfig optimizer{1.5e-5, 0.9, 0.999, 1e-8, 0.0};
  std::size_t guard_every = 100;
};

/// Smallest entry of the row-softmaxed embedding distance matrix next to its
/// guaranteed floor 1 / (K exp(2 max_k ||e_k||)).
struct CollapseCheck {
  std::size_t step = 0;
  double min_entry = 0.0;
  double floor = 0.0;
  bool holds() const { return min_entry >= floor; }
};

CollapseCheck collapse_check(const EmbeddingTable& table, std::size_t step);

struct PretrainResult {
  EmbeddingTable table;              // frozen
  std::vector<double> loss_trace;    // steps + 1 values: initial, then after each step
  std::vector<CollapseCheck> checks; // step 0, every guard_every steps, and the last step
};

/// Minimizes the manifold loss with AdamW and freezes the result. Throws
/// TrainingFailure on a non-finite loss, InvalidInput for an already frozen table.
PretrainResult pretrain_embeddings(EmbeddingTable init, const PrototypeSet& prototypes,
                                   const PretrainConfig& config);

/// Mean of the off-diagonal entries of the cosine matrix.
double mean_offdiagonal_cosine(const Tensor2& vectors);

// Text layout: "esma-embedding 1", "classes K dim D frozen 0|1", then K rows.
void save_embeddings(std::ostream& os, const EmbeddingTable& table);
EmbeddingTable load_embeddings(std::istream& is);
void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

}  // namespace esma
