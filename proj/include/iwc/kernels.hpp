#pragma once

// Data-parallel reductions used on the estimator and learner hot paths.
//
// Each kernel has a scalar reference implementation and an AVX2/FMA variant.
// The variant is picked once per process from the CPU feature flags; setting
// IWC_SIMD=scalar in the environment forces the reference path. Both paths use
// compensated (Neumaier) accumulation, so results agree to a few ulps of the
// condition-scaled sum rather than bit-for-bit.

#include <cstddef>
#include <span>

namespace iwc::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  double (*sum)(std::span<const double> x);
  double (*dot)(std::span<const double> a, std::span<const double> b);
  // sum_m num[m] * (y[m] - g[m]) / den[m]
  double (*weighted_residual_sum)(std::span<const double> y,
                                  std::span<const double> g,
                                  std::span<const double> num,
                                  std::span<const double> den);
  // out[r] = bias + sum_c a[r * cols + c] * x[c], row-major a
  void (*gemv)(std::span<const double> a, std::size_t rows, std::size_t cols,
               std::span<const double> x, double bias, std::span<double> out);
  // y += alpha * x
  void (*axpy)(double alpha, std::span<const double> x, std::span<double> y);
};

const KernelTable& scalar_table();
// Null when the CPU or compiler lacks AVX2+FMA.
const KernelTable* avx2_table();

// The table selected for this process.
const KernelTable& active();
Isa active_isa();
const char* isa_name(Isa isa);

inline double sum(std::span<const double> x) { return active().sum(x); }
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a, b);
}
inline double weighted_residual_sum(std::span<const double> y,
                                    std::span<const double> g,
                                    std::span<const double> num,
                                    std::span<const double> den) {
  return active().weighted_residual_sum(y, g, num, den);
}
inline void gemv(std::span<const double> a, std::size_t rows, std::size_t cols,
                 std::span<const double> x, double bias,
                 std::span<double> out) {
  active().gemv(a, rows, cols, x, bias, out);
}
inline void axpy(double alpha, std::span<const double> x,
                 std::span<double> y) {
  active().axpy(alpha, x, y);
}

}  // namespace iwc::kernels
