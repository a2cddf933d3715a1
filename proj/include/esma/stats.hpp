#pragma once

#include <span>
#include <vector>

namespace esma {

double mean(std::span<const double> v);

/// Population standard deviation; 0 for fewer than two values.
double stddev(std::span<const double> v);

/// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> v);

/// Pearson correlation; 0 when either input is constant.
double pearson(std::span<const double> a, std::span<const double> b);

/// Pearson correlation of the average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

struct TercileMeans {
  double bottom = 0.0;  // mean value over the lowest third of keys
  double top = 0.0;     // mean value over the highest third of keys
};

/// Sorts by key (stable, ties by position) and averages `values` over the
/// first and last floor(n/3) entries. Throws InvalidInput for n < 3.
TercileMeans tercile_means(std::span<const double> values, std::span<const double> keys);

/// a.b / (|a||b|); throws InvalidInput for a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace esma
