#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace esma {

/// Dense row-major matrix of doubles.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor2(std::size_t r, std::size_t c, std::vector<double> values);

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool all_finite() const;
  bool operator==(const Tensor2&) const = default;
};

/// Stacks rows selected by `indices`.
Tensor2 gather_rows(const Tensor2& src, std::span<const std::size_t> indices);

}  // namespace esma
