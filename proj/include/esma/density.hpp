#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "esma/dataset.hpp"
#include "esma/mlp.hpp"

namespace esma {

/// Volume of the closed Euclidean ball of radius r in R^d:
/// pi^(d/2) r^d / Gamma(d/2 + 1). Throws InvalidInput for d = 0 or r <= 0.
double ball_volume(std::size_t d, double r);

/// Exact per-class neighborhood counting over a fixed dataset.
/// Immutable after construction; queries may run concurrently.
class DensityIndex {
 public:
  explicit DensityIndex(const LabeledDataset& data);

  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return classes_.size(); }
  std::size_t class_size(ClassIndex k) const;

  /// #{i in class k : ||x_i - x0|| <= r}.
  std::size_t count_within(ClassIndex k, std::span<const double> x0, double r) const;

  /// Dataset indices of the class-k points in the closed ball, ascending.
  std::vector<std::size_t> members_within(ClassIndex k, std::span<const double> x0,
                                          double r) const;

  /// Row-major copy of a member point.
  std::span<const double> point(std::size_t dataset_index) const;

 private:
  struct ClassPoints {
    std::vector<double> coords;     // dim x n, structure of arrays
    std::vector<std::size_t> ids;   // dataset indices, ascending
  };
  void check_query(ClassIndex k, std::span<const double> x0, double r) const;

  std::size_t dim_ = 0;
  std::vector<ClassPoints> classes_;
  Tensor2 points_;
};

struct DensityQueryResult {
  std::size_t count = 0;
  double volume = 0.0;
  double density = 0.0;  // count / volume
};

/// (j, x0, r)-local sample density with closed-ball membership.
DensityQueryResult local_density(const DensityIndex& index, ClassIndex j,
                                 std::span<const double> x0, double r);

/// Mean softmax-CE loss of `model` over the class-j samples in B(x0, r).
/// Throws EmptyNeighborhood when the ball holds no class-j sample.
double local_empirical_risk(const MlpClassifier& model, const DensityIndex& index, ClassIndex j,
                            std::span<const double> x0, double r);

struct BinStat {
  std::size_t count = 0;
  double mean = 0.0;    // meaningful only when count > 0
  double stddev = 0.0;  // population standard deviation
  bool empty() const { return count == 0; }
};

/// Bins `values` by `keys` over strictly increasing `edges`: bins are
/// [e_i, e_{i+1}) except the last, which is closed. Keys outside
/// [e_0, e_last] are ignored.
std::vector<BinStat> binned_statistic(std::span<const double> values, std::span<const double> keys,
                                      std::span<const double> edges);

/// Bin index for `key` under the same convention, or -1 if out of range.
std::ptrdiff_t bin_of(double key, std::span<const double> edges);

/// n + 1 evenly spaced edges over [lo, hi].
std::vector<double> uniform_edges(double lo, double hi, std::size_t n);

}  // namespace esma
