#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "esma/attacks.hpp"
#include "esma/config.hpp"
#include "esma/data.hpp"
#include "esma/embedding.hpp"
#include "esma/generator.hpp"
#include "esma/mlp.hpp"
#include "esma/report.hpp"
#include "esma/screening.hpp"
#include "esma/train.hpp"

namespace esma {

/// Every knob of the toy experiments. `to_config` / `from_config` map it to
/// flat key-value text; a saved config reproduces a run exactly.
struct ExperimentSettings {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  // data
  std::size_t classes = 2;        // 2: two Gaussians on the x axis, 3: triangle
  double offset = 1.5;            // distance of each class mean from the origin
  std::size_t samples = 200;
  std::size_t eval_samples = 200; // held-out attack sources

  // classifiers
  std::vector<Architecture> architectures{Architecture::wide(), Architecture::pyramid(),
                                          Architecture::narrow()};
  TrainConfig train{32, 3000, LearningRate::inverse_sqrt(0.5), 30, 0, 0.2};
  std::size_t surrogate = 1;                // index into architectures
  std::vector<std::size_t> victims{0, 2};

  // density
  double r = 0.4;
  std::size_t bins = 10;

  // iterative attacks
  double eps = 0.5;
  std::size_t attack_steps = 20;
  double momentum = 1.0;
  std::size_t q = 10;

  // generator
  std::size_t esma_q = 2;
  std::size_t embed_dim = 32;
  PretrainConfig pretrain{};
  GeneratorConfig generator{InputGeometry::flat(2), 32, 3};
  std::size_t gen_epochs = 300;
  double gen_lr = 1e-4;

  // q ablation; 0 stands for "all"
  std::vector<std::uint64_t> q_values{1, 2, 5, 10, 0};

  GaussianMixtureSpec spec(std::uint64_t seed, std::size_t n) const;
  AttackConfig attack_config(AttackLoss loss, AnchorSource source) const;
  void validate() const;
};

KeyValueConfig to_config(const ExperimentSettings& s);
/// Unknown keys are rejected so that typos do not silently fall back to defaults.
ExperimentSettings from_config(const KeyValueConfig& c);

/// Data and independently trained classifiers for one seed.
struct SeedRun {
  std::uint64_t seed = 0;
  LabeledDataset train;
  LabeledDataset eval;
  std::vector<MlpClassifier> models;  // one per architecture
};

/// Sub-seeds depend only on (seed, architecture widths), so two identical
/// architectures train to identical models.
SeedRun prepare_seed(const ExperimentSettings& s, std::uint64_t seed,
                     std::span<const std::size_t> which_models);
SeedRun prepare_seed(const ExperimentSettings& s, std::uint64_t seed);

/// Early-stopped classifier of one architecture on `data`.
MlpClassifier train_architecture(const ExperimentSettings& s, const Architecture& arch,
                                 const LabeledDataset& data, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct ConsistencySeed {
  std::uint64_t seed = 0;
  double top_tercile = 0.0;     // mean output difference, densest third
  double bottom_tercile = 0.0;  // mean output difference, sparsest third
  bool holds() const { return top_tercile < bottom_tercile; }
};

struct ConsistencyOutcome {
  ExperimentReport report;
  std::vector<ConsistencySeed> seeds;
};

/// Per sample: max over model pairs of ||softmax(f_a(x)) - softmax(f_b(x))||_inf,
/// against the local density rho(y, x, r).
ConsistencyOutcome consistency_experiment(const ExperimentSettings& s);

struct DifficultySeed {
  std::uint64_t seed = 0;
  double spearman_density_risk = 0.0;
  double spearman_difficulty_density = 0.0;
  double spearman_difficulty_risk = 0.0;
};

struct DifficultyOutcome {
  ExperimentReport report;
  std::vector<DifficultySeed> seeds;
};

/// Scores the surrogate architecture's samples and relates local risk,
/// density and Loss+Gradnorm difficulty.
DifficultyOutcome difficulty_experiment(const ExperimentSettings& s);

enum class AttackMethod { ce, random_anchor, screened_anchor, esma };
std::string method_name(AttackMethod m);
AttackMethod parse_method(const std::string& name);

struct Table1Seed {
  std::uint64_t seed = 0;
  // mean over black-box victims
  double ce = 0.0;
  double random_anchor = 0.0;
  double screened_anchor = 0.0;
  // surrogate attacking itself
  double ce_white = 0.0;
  double random_white = 0.0;
  double screened_white = 0.0;
  bool chain_holds() const { return screened_anchor >= random_anchor && random_anchor >= ce; }
};

struct Table1Outcome {
  ExperimentReport report;
  std::vector<Table1Seed> seeds;
};

/// CE / random-anchor / screened-anchor momentum attacks on every
/// (held-out sample, other class) pair, transferred to the victims.
Table1Outcome table1_protocol(const ExperimentSettings& s);

struct DensityShift {
  std::vector<double> edges;
  std::vector<std::size_t> clean_counts;
  std::vector<std::size_t> adversarial_counts;
  std::size_t clean_upper = 0;        // samples with normalized density >= 0.6
  std::size_t adversarial_upper = 0;
  double clean_mean = 0.0;            // raw densities, before normalization
  double adversarial_mean = 0.0;
};

/// Target-class density of clean and adversarial points against `reference`,
/// averaged over a sample's targets, divided by the joint maximum and binned
/// over [0, 1].
DensityShift density_shift_eval(const LabeledDataset& reference, const AttackResult& result,
                                double r, std::size_t bins);

struct EsmaSeed {
  std::uint64_t seed = 0;
  double esma = 0.0;        // mean black-box transfer rate of the generator
  double iterative = 0.0;   // screened-anchor momentum attack, same anchors and budget
  double esma_white = 0.0;
  std::size_t emitted = 0;
  std::size_t budget_violations = 0;
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
  DensityShift shift;       // of the generator outputs
  bool beats_iterative() const { return esma >= iterative; }
};

struct EsmaOutcome {
  ExperimentReport report;
  std::vector<EsmaSeed> seeds;
};

/// Prototype pretraining, generator training and transfer evaluation.
EsmaOutcome esma_experiment(const ExperimentSettings& s);

/// Trains one generator for a prepared seed.
struct EsmaArtifacts {
  EmbeddingTable embeddings;
  AnchorBook book;
  EsmaTrainResult trained;
};
EsmaArtifacts train_esma_for(const ExperimentSettings& s, const MlpClassifier& surrogate,
                             const LabeledDataset& data, std::uint64_t seed);

/// Applies a generator to every request.
AttackResult run_generator(const PerturbationGenerator& g, const MlpClassifier& surrogate,
                           const Tensor2& points, std::span<const AttackRequest> requests,
                           const PerturbationBudget& budget);

/// Count of emitted points outside the budget (1e-9 slack) or the range.
std::size_t budget_violations(const AttackResult& result, double epsilon, DataRange range);

struct QAblationSeed {
  std::uint64_t seed = 0;
  std::vector<double> mean;    // per q value
  std::vector<double> stddev;
};

struct QAblationOutcome {
  ExperimentReport report;
  std::vector<QAblationSeed> seeds;
};

/// Mean cosine similarity between surrogate and victim logits over the
/// screened samples, per q ("all" = no screening).
QAblationOutcome q_ablation(const ExperimentSettings& s);

}  // namespace esma
