#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "esma/attacks.hpp"
#include "esma/dataset.hpp"
#include "esma/embedding.hpp"
#include "esma/mlp.hpp"
#include "esma/optim.hpp"
#include "esma/screening.hpp"

namespace esma {

/// Shape of one input point. Points with height and width > 1 are treated as
/// channel-major image grids; everything else is a flat vector.
struct InputGeometry {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  static InputGeometry flat(std::size_t d) { return {d, 1, 1}; }
  std::size_t size() const { return channels * height * width; }
  bool is_grid() const { return height > 1 && width > 1; }
  bool operator==(const InputGeometry&) const = default;
};

/// Normalized, flip-symmetric 3x3 Gaussian weights.
struct SmoothingKernel {
  std::array<double, 9> weights{};
  double sigma = 1.0;

  static SmoothingKernel gaussian(double sigma = 1.0);
};

/// Per-channel 3x3 convolution with replicate padding; identity for flat inputs.
std::vector<double> smooth(std::span<const double> x, InputGeometry geometry,
                           const SmoothingKernel& kernel);

/// Adjoint of `smooth` (used to backpropagate through it).
std::vector<double> smooth_adjoint(std::span<const double> grad, InputGeometry geometry,
                                   const SmoothingKernel& kernel);

/// Attack budget shared by generation and evaluation.
struct PerturbationBudget {
  double epsilon = 1.0;
  DataRange range{};
  SmoothingKernel kernel = SmoothingKernel::gaussian(1.0);
};

/// smooth, then project_linf around x_orig.
std::vector<double> smooth_and_clip(std::span<const double> raw, std::span<const double> x_orig,
                                    InputGeometry geometry, const PerturbationBudget& budget);

/// Mean over coordinates of 0.5 t^2 (|t| < 1) or |t| - 0.5, t = a_i - b_i.
double smooth_l1(std::span<const double> a, std::span<const double> b);

struct GeneratorConfig {
  InputGeometry geometry{};
  std::size_t hidden = 32;
  std::size_t blocks = 3;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Class-conditional dense encoder-decoder:
///   h0  = relu(W_in x + b_in)
///   per block: h' = T1 h + MLP(e_target); n = LN(T2 relu(h'));
///              h <- sigmoid(A n + a) * n + h
///   out = x + W_out h + b_out
/// The embedding table is frozen and never updated by training.
class PerturbationGenerator {
 public:
  static PerturbationGenerator initialize(const GeneratorConfig& config, EmbeddingTable embeddings,
                                          std::uint64_t seed);

  const GeneratorConfig& config() const { return config_; }
  const EmbeddingTable& embeddings() const { return embeddings_; }
  std::size_t num_classes() const { return embeddings_.num_classes(); }

  std::span<double> parameters() { return theta_; }
  std::span<const double> parameters() const { return theta_; }

  /// Raw (unclipped) output for `x` conditioned on `target`.
  std::vector<double> generate(std::span<const double> x, ClassIndex target) const;

  /// Gradient of <d_out, generate(x, target)> w.r.t. the parameters, accumulated into `grad`.
  void accumulate_gradient(std::span<const double> x, ClassIndex target,
                           std::span<const double> d_out, std::span<double> grad) const;

  /// Zeroes every parameter of the embedding projections (MLP(e) in each block).
  void zero_injection();

  bool operator==(const PerturbationGenerator&) const = default;

  friend void save_generator(std::ostream& os, const PerturbationGenerator& g);
  friend PerturbationGenerator load_generator(std::istream& is);

 private:
  struct Dense {
    std::size_t w = 0, b = 0, out = 0, in = 0;
    bool operator==(const Dense&) const = default;
  };
  struct Block {
    Dense t1, inject, t2, gate;
    std::size_t ln_gain = 0, ln_bias = 0;
    bool operator==(const Block&) const = default;
  };
  struct BlockCache;
  struct Cache;

  void build_layout();
  void forward(std::span<const double> x, ClassIndex target, Cache& cache) const;

  GeneratorConfig config_{};
  EmbeddingTable embeddings_{};
  std::vector<double> theta_;
  Dense encoder_{}, decoder_{};
  std::vector<Block> blocks_;
};

/// Adversarial point: smooth_and_clip(generate(x, target)).
std::vector<double> generate_adversarial(const PerturbationGenerator& g, std::span<const double> x,
                                         ClassIndex target, const PerturbationBudget& budget);

struct EmLoss {
  double value = 0.0;          // mean over active rows
  std::size_t active_rows = 0; // rows whose label differs from their target
  std::vector<double> grad;    // w.r.t. generator parameters (empty if not requested)
};

/// Easy-sample feature matching loss: mean over rows with label != target of
/// smooth_l1(anchor_features[i], f(smooth_and_clip(G(x_i, target_i)))).
/// Throws InvalidInput when every row has label == target.
EmLoss em_loss(const PerturbationGenerator& g, const MlpClassifier& surrogate, const Tensor2& batch,
               std::span<const ClassIndex> labels, std::span<const ClassIndex> targets,
               const Tensor2& anchor_features, const PerturbationBudget& budget,
               bool with_gradient = true);

struct EsmaTrainConfig {
  std::size_t epochs = 300;
  AdamWConfig optimizer{1e-4, 0.9, 0.999, 1e-8, 0.0};
  PerturbationBudget budget{};
  std::uint64_t seed = 0;
};

struct EsmaTrainResult {
  PerturbationGenerator generator;
  std::vector<double> epoch_loss;  // mean step loss per epoch; 0 when every sample was skipped
};

/// For each epoch and each sample: draw a target uniformly over [K], skip
/// when it equals the label, draw an anchor member uniformly from A_target,
/// and take one AdamW step on the per-sample loss.
EsmaTrainResult train_esma(PerturbationGenerator g, const MlpClassifier& surrogate,
                           const LabeledDataset& data, const AnchorBook& anchors,
                           const EsmaTrainConfig& config);

/// Layout: "esma-generator 1", geometry, hidden, blocks, embedded table, parameters.
void save_generator(std::ostream& os, const PerturbationGenerator& g);
PerturbationGenerator load_generator(std::istream& is);
void save_generator(const std::filesystem::path& path, const PerturbationGenerator& g);
PerturbationGenerator load_generator(const std::filesystem::path& path);

}  // namespace esma
