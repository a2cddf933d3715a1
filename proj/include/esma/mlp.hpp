#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "esma/dataset.hpp"
#include "esma/tensor.hpp"

namespace esma {

enum class Activation { relu, identity };

struct DenseLayer {
  Tensor2 weight;             // out x in
  std::vector<double> bias;   // out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }
  bool operator==(const DenseLayer&) const = default;
};

/// Feed-forward classifier R^d -> R^K producing raw logits.
class MlpClassifier {
 public:
  MlpClassifier() = default;
  /// Validates that layer dimensions chain and the final layer is linear.
  explicit MlpClassifier(std::vector<DenseLayer> layers);

  /// Layer widths {d, h1, ..., K}; ReLU on hidden layers, identity on the last.
  /// Weights ~ U(-sqrt(6/(fan_in+fan_out)), +sqrt(...)), zero biases.
  static MlpClassifier initialize(std::span<const std::size_t> widths, std::uint64_t seed);

  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.back().out_dim(); }
  std::size_t parameter_count() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  bool operator==(const MlpClassifier&) const = default;

 private:
  std::vector<DenseLayer> layers_;
};

struct LayerGradient {
  Tensor2 weight;
  std::vector<double> bias;
};

/// Parameter gradients of a batch-mean objective, shaped like the model.
/// `input`, when requested, holds one row per sample: the gradient of that
/// sample's own objective term with respect to its input (not divided by n).
struct GradientBundle {
  std::vector<LayerGradient> layers;
  Tensor2 input;
};

struct LossAndGradient {
  double mean_loss = 0.0;
  GradientBundle grads;
};

enum class GradientParts { parameters, inputs, both };

/// Logits for every row of `batch` (n x K).
Tensor2 forward(const MlpClassifier& model, const Tensor2& batch);

/// Logits for a single point.
std::vector<double> forward_point(const MlpClassifier& model, std::span<const double> x);

/// Backpropagates per-sample logit gradients `dlogits` (n x K). Parameter
/// gradients are averaged over the n rows; input gradients are per row.
GradientBundle backward_from_logits(const MlpClassifier& model, const Tensor2& batch,
                                    const Tensor2& dlogits, GradientParts parts);

/// Mean softmax cross-entropy over the batch and its gradients.
LossAndGradient backward(const MlpClassifier& model, const Tensor2& batch,
                         std::span<const ClassIndex> labels,
                         GradientParts parts = GradientParts::parameters);

/// Mean softmax cross-entropy without gradients.
double mean_loss(const MlpClassifier& model, const Tensor2& batch,
                 std::span<const ClassIndex> labels);

/// Gradient of `objective(f(x))` w.r.t. a single input x given dobjective/dlogits.
std::vector<double> input_gradient(const MlpClassifier& model, std::span<const double> x,
                                   std::span<const double> dlogits);

}  // namespace esma
