#include <immintrin.h>

#include "esma/kernels.hpp"

namespace esma::kernels {
namespace {

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    acc1 = _mm256_add_pd(acc1,
                         _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  acc0 = _mm256_add_pd(acc0, acc1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc0);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Vectorized across points; per point the arithmetic sequence matches the
// scalar reference so membership decisions agree exactly.
std::size_t count_within_avx2(const double* coords, std::size_t stride, std::size_t n,
                              const double* query, std::size_t dim, double radius_sq,
                              std::uint8_t* mask) {
  const __m256d vr = _mm256_set1_pd(radius_sq);
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d d2 = _mm256_setzero_pd();
    for (std::size_t k = 0; k < dim; ++k) {
      const __m256d diff =
          _mm256_sub_pd(_mm256_loadu_pd(coords + k * stride + i), _mm256_set1_pd(query[k]));
      d2 = _mm256_add_pd(d2, _mm256_mul_pd(diff, diff));
    }
    const int bits = _mm256_movemask_pd(_mm256_cmp_pd(d2, vr, _CMP_LE_OQ));
    count += static_cast<std::size_t>(__builtin_popcount(static_cast<unsigned>(bits)));
    if (mask) {
      for (int lane = 0; lane < 4; ++lane) mask[i + lane] = (bits >> lane) & 1;
    }
  }
  for (; i < n; ++i) {
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

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::avx2, dot_avx2, axpy_avx2, count_within_avx2};
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
}

}  // namespace esma::kernels
