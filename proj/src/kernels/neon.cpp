#include <arm_neon.h>

#include "esma/kernels.hpp"

namespace esma::kernels {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vaddq_f64(acc0, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    acc1 = vaddq_f64(acc1, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
  }
  acc0 = vaddq_f64(acc0, acc1);
  double s = vgetq_lane_f64(acc0, 0) + vgetq_lane_f64(acc0, 1);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

std::size_t count_within_neon(const double* coords, std::size_t stride, std::size_t n,
                              const double* query, std::size_t dim, double radius_sq,
                              std::uint8_t* mask) {
  const float64x2_t vr = vdupq_n_f64(radius_sq);
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t d2 = vdupq_n_f64(0.0);
    for (std::size_t k = 0; k < dim; ++k) {
      const float64x2_t diff = vsubq_f64(vld1q_f64(coords + k * stride + i), vdupq_n_f64(query[k]));
      d2 = vaddq_f64(d2, vmulq_f64(diff, diff));
    }
    const uint64x2_t le = vcleq_f64(d2, vr);
    const std::uint8_t in0 = vgetq_lane_u64(le, 0) ? 1 : 0;
    const std::uint8_t in1 = vgetq_lane_u64(le, 1) ? 1 : 0;
    count += in0 + in1;
    if (mask) {
      mask[i] = in0;
      mask[i + 1] = in1;
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

const KernelTable* neon_table() {
  static const KernelTable table{Isa::neon, dot_neon, axpy_neon, count_within_neon};
  return &table;
}

}  // namespace esma::kernels
