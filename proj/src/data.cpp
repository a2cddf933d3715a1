#include "esma/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "esma/errors.hpp"
#include "esma/rng.hpp"

namespace esma {

namespace {

Eigen::MatrixXd to_eigen(const Tensor2& m) {
  Eigen::MatrixXd out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(i, j);
  }
  return out;
}

Tensor2 identity(std::size_t d) {
  Tensor2 m(d, d);
  for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
  return m;
}

}  // namespace

void GaussianMixtureSpec::validate() const {
  if (classes.empty()) throw InvalidInput("mixture: no classes");
  const std::size_t d = dim();
  if (d == 0) throw InvalidInput("mixture: zero dimension");
  double total = 0.0;
  for (const auto& c : classes) {
    if (c.mean.size() != d) throw InvalidInput("mixture: mean dimension mismatch");
    if (c.covariance.rows != d || c.covariance.cols != d) {
      throw InvalidInput("mixture: covariance must be d x d");
    }
    if (!(c.prior > 0.0) || !std::isfinite(c.prior)) throw InvalidInput("mixture: bad prior");
    total += c.prior;
    const auto cov = to_eigen(c.covariance);
    if (!cov.allFinite() || !cov.isApprox(cov.transpose(), 0.0)) {
      throw InvalidInput("mixture: covariance must be symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw InvalidInput("mixture: covariance not positive definite");
    if (!(cov.determinant() >= 1e-12)) throw InvalidInput("mixture: covariance is near singular");
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("mixture: priors must sum to 1");
}

GaussianMixtureSpec GaussianMixtureSpec::two_gaussians(double offset, std::size_t samples,
                                                       std::uint64_t seed) {
  GaussianMixtureSpec s;
  s.classes.push_back({{-offset, 0.0}, identity(2), 0.5});
  s.classes.push_back({{offset, 0.0}, identity(2), 0.5});
  s.samples = samples;
  s.seed = seed;
  return s;
}

GaussianMixtureSpec GaussianMixtureSpec::three_gaussians(double radius, std::size_t samples,
                                                         std::uint64_t seed) {
  GaussianMixtureSpec s;
  for (int k = 0; k < 3; ++k) {
    const double a = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * k / 3.0;
    s.classes.push_back({{radius * std::cos(a), radius * std::sin(a)}, identity(2), 1.0 / 3.0});
  }
  s.samples = samples;
  s.seed = seed;
  return s;
}

LabeledDataset gen_gaussian_mixture(const GaussianMixtureSpec& spec) {
  spec.validate();
  const std::size_t d = spec.dim();
  const std::size_t k = spec.classes.size();
  std::vector<Eigen::MatrixXd> factors;
  std::vector<double> priors;
  for (const auto& c : spec.classes) {
    factors.push_back(Eigen::LLT<Eigen::MatrixXd>(to_eigen(c.covariance)).matrixL());
    priors.push_back(c.prior);
  }

  Rng rng(spec.seed);
  std::discrete_distribution<std::size_t> pick(priors.begin(), priors.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  LabeledDataset out;
  out.num_classes = k;
  out.points = Tensor2(spec.samples, d);
  out.labels.resize(spec.samples);
  Eigen::VectorXd z(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::size_t c = pick(rng);
    for (std::size_t j = 0; j < d; ++j) z(static_cast<Eigen::Index>(j)) = normal(rng);
    const Eigen::VectorXd x = factors[c] * z;
    for (std::size_t j = 0; j < d; ++j) {
      out.points(i, j) = spec.classes[c].mean[j] + x(static_cast<Eigen::Index>(j));
    }
    out.labels[i] = c;
  }
  return out;
}

std::vector<double> bayes_posterior(const GaussianMixtureSpec& spec, std::span<const double> x) {
  spec.validate();
  const std::size_t d = spec.dim();
  if (x.size() != d) throw InvalidInput("bayes_posterior: point dimension mismatch");
  // Work in log space so that far-away points do not underflow every class.
  std::vector<double> logp;
  for (const auto& c : spec.classes) {
    const auto cov = to_eigen(c.covariance);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    Eigen::VectorXd diff(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) diff(static_cast<Eigen::Index>(j)) = x[j] - c.mean[j];
    const Eigen::VectorXd w = llt.matrixL().solve(diff);
    const Eigen::MatrixXd lm = llt.matrixL();
    double log_det = 0.0;
    for (Eigen::Index j = 0; j < lm.rows(); ++j) log_det += 2.0 * std::log(lm(j, j));
    logp.push_back(std::log(c.prior) - 0.5 * w.squaredNorm() - 0.5 * log_det);
  }
  const double mx = *std::max_element(logp.begin(), logp.end());
  double total = 0.0;
  for (double& v : logp) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : logp) v /= total;
  return logp;
}

std::vector<std::size_t> Architecture::widths(std::size_t input_dim, std::size_t classes) const {
  std::vector<std::size_t> w{input_dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(classes);
  return w;
}

}  // namespace esma
