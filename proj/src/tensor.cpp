#include "esma/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "esma/errors.hpp"

namespace esma {

Tensor2::Tensor2(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw InvalidInput("Tensor2: data length != rows * cols");
}

bool Tensor2::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Tensor2 gather_rows(const Tensor2& src, std::span<const std::size_t> indices) {
  Tensor2 out(indices.size(), src.cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= src.rows) throw InvalidInput("gather_rows: index out of range");
    std::copy_n(src.row(indices[i]).begin(), src.cols, out.row(i).begin());
  }
  return out;
}

}  // namespace esma
