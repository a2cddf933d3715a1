#include "esma/density.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "esma/errors.hpp"
#include "esma/kernels.hpp"

namespace esma {

double ball_volume(std::size_t d, double r) {
  if (d == 0) throw InvalidInput("ball_volume: dimension must be >= 1");
  if (!(r > 0.0) || !std::isfinite(r)) throw InvalidInput("ball_volume: radius must be > 0");
  const double half = 0.5 * static_cast<double>(d);
  const double log_v = half * std::log(std::numbers::pi) + static_cast<double>(d) * std::log(r) -
                       std::lgamma(half + 1.0);
  return std::exp(log_v);
}

DensityIndex::DensityIndex(const LabeledDataset& data) : dim_(data.dim()), points_(data.points) {
  data.validate();
  classes_.resize(data.num_classes);
  for (ClassIndex k = 0; k < data.num_classes; ++k) {
    auto& c = classes_[k];
    c.ids = data.class_indices(k);
    const std::size_t n = c.ids.size();
    c.coords.resize(dim_ * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < dim_; ++a) c.coords[a * n + i] = data.points(c.ids[i], a);
    }
  }
}

std::size_t DensityIndex::class_size(ClassIndex k) const {
  if (k >= classes_.size()) throw InvalidInput("density: unknown class");
  return classes_[k].ids.size();
}

void DensityIndex::check_query(ClassIndex k, std::span<const double> x0, double r) const {
  if (k >= classes_.size()) throw InvalidInput("density: unknown class");
  if (x0.size() != dim_) throw InvalidInput("density: query dimension mismatch");
  if (!(r > 0.0)) throw InvalidInput("density: radius must be > 0");
}

std::size_t DensityIndex::count_within(ClassIndex k, std::span<const double> x0, double r) const {
  check_query(k, x0, r);
  const auto& c = classes_[k];
  return kernels::active().count_within(c.coords.data(), c.ids.size(), c.ids.size(), x0.data(),
                                        dim_, r * r, nullptr);
}

std::vector<std::size_t> DensityIndex::members_within(ClassIndex k, std::span<const double> x0,
                                                      double r) const {
  check_query(k, x0, r);
  const auto& c = classes_[k];
  std::vector<std::uint8_t> mask(c.ids.size());
  kernels::active().count_within(c.coords.data(), c.ids.size(), c.ids.size(), x0.data(), dim_,
                                 r * r, mask.data());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(c.ids[i]);
  }
  return out;
}

std::span<const double> DensityIndex::point(std::size_t dataset_index) const {
  if (dataset_index >= points_.rows) throw InvalidInput("density: point index out of range");
  return points_.row(dataset_index);
}

DensityQueryResult local_density(const DensityIndex& index, ClassIndex j,
                                 std::span<const double> x0, double r) {
  DensityQueryResult out;
  out.count = index.count_within(j, x0, r);
  out.volume = ball_volume(index.dim(), r);
  out.density = static_cast<double>(out.count) / out.volume;
  return out;
}

double local_empirical_risk(const MlpClassifier& model, const DensityIndex& index, ClassIndex j,
                            std::span<const double> x0, double r) {
  const auto members = index.members_within(j, x0, r);
  if (members.empty()) throw EmptyNeighborhood("local_empirical_risk: no class samples in ball");
  Tensor2 batch(members.size(), index.dim());
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto p = index.point(members[i]);
    std::copy(p.begin(), p.end(), batch.row(i).begin());
  }
  const std::vector<ClassIndex> labels(members.size(), j);
  return mean_loss(model, batch, labels);
}

std::ptrdiff_t bin_of(double key, std::span<const double> edges) {
  if (edges.size() < 2 || std::isnan(key)) return -1;
  if (key < edges.front() || key > edges.back()) return -1;
  if (key == edges.back()) return static_cast<std::ptrdiff_t>(edges.size()) - 2;
  const auto it = std::upper_bound(edges.begin(), edges.end(), key);
  return (it - edges.begin()) - 1;
}

std::vector<double> uniform_edges(double lo, double hi, std::size_t n) {
  if (n < 1 || !(hi > lo)) throw InvalidInput("uniform_edges: need n >= 1 and hi > lo");
  std::vector<double> e(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n);
  }
  e[n] = hi;
  return e;
}

std::vector<BinStat> binned_statistic(std::span<const double> values, std::span<const double> keys,
                                      std::span<const double> edges) {
  if (values.size() != keys.size()) throw InvalidInput("binned_statistic: length mismatch");
  if (edges.size() < 2) throw InvalidInput("binned_statistic: need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw InvalidInput("binned_statistic: edges not increasing");
  }
  const std::size_t nb = edges.size() - 1;
  std::vector<BinStat> out(nb);
  std::vector<double> sum(nb, 0.0);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto b = bin_of(keys[i], edges);
    if (b < 0) continue;
    out[b].count++;
    sum[b] += values[i];
  }
  for (std::size_t b = 0; b < nb; ++b) {
    if (out[b].count) out[b].mean = sum[b] / static_cast<double>(out[b].count);
  }
  std::vector<double> sq(nb, 0.0);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto b = bin_of(keys[i], edges);
    if (b < 0) continue;
    const double dv = values[i] - out[b].mean;
    sq[b] += dv * dv;
  }
  for (std::size_t b = 0; b < nb; ++b) {
    if (out[b].count) out[b].stddev = std::sqrt(sq[b] / static_cast<double>(out[b].count));
  }
  return out;
}

}  // namespace esma
