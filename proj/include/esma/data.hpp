#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "esma/dataset.hpp"
#include "esma/tensor.hpp"

namespace esma {

struct GaussianComponent {
  std::vector<double> mean;
  Tensor2 covariance;  // d x d, symmetric positive definite
  double prior = 0.0;
};

struct GaussianMixtureSpec {
  std::vector<GaussianComponent> classes;
  std::size_t samples = 200;
  std::uint64_t seed = 0;

  std::size_t dim() const { return classes.empty() ? 0 : classes.front().mean.size(); }

  /// Throws InvalidInput for mismatched shapes, priors that do not sum to 1,
  /// or a covariance that is asymmetric, not positive definite, or has det < 1e-12.
  void validate() const;

  /// Two equal-prior isotropic classes with means (-offset, 0) and (+offset, 0).
  static GaussianMixtureSpec two_gaussians(double offset = 1.5, std::size_t samples = 200,
                                           std::uint64_t seed = 0);
  /// Three equal-prior isotropic classes on a triangle of the given radius.
  static GaussianMixtureSpec three_gaussians(double radius = 1.5, std::size_t samples = 300,
                                             std::uint64_t seed = 0);
};

/// Labels drawn from the priors, points from the class Gaussian, seeded by spec.seed.
LabeledDataset gen_gaussian_mixture(const GaussianMixtureSpec& spec);

/// Exact posterior P(k | x) of the mixture.
std::vector<double> bayes_posterior(const GaussianMixtureSpec& spec, std::span<const double> x);

/// Hidden-layer widths of the toy classifiers; `widths(d, K)` adds the ends.
struct Architecture {
  std::vector<std::size_t> hidden;

  std::vector<std::size_t> widths(std::size_t input_dim, std::size_t classes) const;
  bool operator==(const Architecture&) const = default;

  static Architecture wide() { return {{500, 500}}; }            // 2-500-500-2
  static Architecture pyramid() { return {{50, 100, 150}}; }     // 2-50-100-150-2
  static Architecture narrow() { return {{20, 20, 20}}; }        // 2-20-20-20-2
};

}  // namespace esma
