#pragma once

// Data-parallel inner loops used by the dense layers and the density scans.
//
// Every kernel has a scalar reference implementation and, where the CPU
// supports it, an AVX2 (x86-64) or NEON (aarch64) variant. The variant is
// picked once at startup; ESMA_KERNELS=scalar in the environment forces the
// reference path. Variants agree with the reference to rounding for the
// reductions (dot) and exactly for the elementwise and counting kernels.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace esma::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

/// Kernel set for one instruction-set level.
struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // Counts points (structure-of-arrays: coords[k * stride + i] is coordinate k
  // of point i) whose squared Euclidean distance to `query` is <= radius_sq.
  // When `mask` is non-null, mask[i] is set to 1 for members and 0 otherwise.
  std::size_t (*count_within)(const double* coords, std::size_t stride, std::size_t n,
                              const double* query, std::size_t dim, double radius_sq,
                              std::uint8_t* mask);
};

const KernelTable& scalar_table();
// Null when the ISA is not compiled in or not supported by this CPU.
const KernelTable* avx2_table();
const KernelTable* neon_table();

/// The table in use. Resolved on first call.
const KernelTable& active();

/// Overrides the active table (tests and benchmarks). Throws if unsupported.
void select(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace esma::kernels
