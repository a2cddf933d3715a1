#include "esma/kernels.hpp"

namespace esma::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

std::size_t count_within_scalar(const double* coords, std::size_t stride, std::size_t n,
                                const double* query, std::size_t dim, double radius_sq,
                                std::uint8_t* mask) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = coords[k * stride + i] - query[k];
      d2 += diff * diff;
    }
    const bool inside = d2 <= radius_sq;
    count += inside ? 1 : 0;
    if (mask) mask[i] = inside ? 1 : 0;
  }
  return count;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, dot_scalar, axpy_scalar, count_within_scalar};
  return table;
}

}  // namespace esma::kernels
