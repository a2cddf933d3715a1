#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "esma/dataset.hpp"
#include "esma/mlp.hpp"

namespace esma {

struct SampleScore {
  std::size_t sample_id = 0;
  ClassIndex label = 0;
  double loss = 0.0;
  double gradnorm = 0.0;  // ||grad_x loss||_2
};

/// Per-sample softmax-CE loss and input-gradient norm under `model`.
std::vector<SampleScore> score_samples(const MlpClassifier& model, const LabeledDataset& data);

struct ClassThreshold {
  double loss = 0.0;
  double gradnorm = 0.0;
};

/// q-th smallest loss and q-th smallest gradnorm within each class (1-based q,
/// duplicates kept). Throws InvalidConfig unless 1 <= q <= smallest class size.
std::vector<ClassThreshold> thresholds(std::span<const SampleScore> scores,
                                       std::size_t num_classes, std::size_t q);

/// Min-max normalized loss plus min-max normalized gradnorm, over all scores.
/// A constant column normalizes to zero. Throws InvalidInput for < 2 scores.
std::vector<double> normalized_difficulty(std::span<const SampleScore> scores);

enum class Comparison { strict, non_strict };

struct ScreenedSet {
  std::vector<std::size_t> members;  // sample ids, ascending
  bool fallback = false;             // true when the threshold rule selected nothing
};

/// A_k = {i in class k : loss_i < thr_loss, gradnorm_i < thr_grad} (or <= for
/// non_strict). An empty A_k falls back to the q class samples of smallest
/// normalized difficulty and is flagged.
std::vector<ScreenedSet> screen(std::span<const SampleScore> scores,
                                std::span<const ClassThreshold> thr, std::size_t q,
                                Comparison cmp = Comparison::strict);

struct AnchorBook {
  std::size_t q = 0;
  std::vector<ClassThreshold> thresholds;
  std::vector<ScreenedSet> sets;              // A_k
  std::vector<std::vector<double>> anchors;   // a_k, mean member logits

  std::size_t num_classes() const { return sets.size(); }
};

/// a_k = mean of f(x_j) over j in A_k. Throws std::logic_error for an empty A_k.
std::vector<std::vector<double>> anchor_logits(const MlpClassifier& model,
                                               const LabeledDataset& data,
                                               std::span<const ScreenedSet> sets);

/// Full screening pipeline: score, threshold, screen, average.
AnchorBook build_anchor_book(const MlpClassifier& model, const LabeledDataset& data, std::size_t q,
                             Comparison cmp = Comparison::strict);

/// JSON layout: {"q": .., "classes": [{"class": k, "members": [...],
/// "fallback": b, "thr_loss": .., "thr_gradnorm": .., "anchor": [...]}, ...]}
void save_anchor_book(std::ostream& os, const AnchorBook& book);
AnchorBook load_anchor_book(std::istream& is);
void save_anchor_book(const std::filesystem::path& path, const AnchorBook& book);
AnchorBook load_anchor_book(const std::filesystem::path& path);

}  // namespace esma
