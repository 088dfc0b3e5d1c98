#include <cassert>
#include <cmath>

#include "iwc/kernels.hpp"
#include "kernels_internal.hpp"

namespace iwc::kernels {
namespace {

double sum_scalar(std::span<const double> x) {
  NeumaierSum acc;
  for (double v : x) acc.add(v);
  return acc.value();
}

double dot_scalar(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  NeumaierSum acc;
  for (std::size_t i = 0; i < a.size(); ++i) acc.add(a[i] * b[i]);
  return acc.value();
}

double weighted_residual_sum_scalar(std::span<const double> y,
                                    std::span<const double> g,
                                    std::span<const double> num,
                                    std::span<const double> den) {
  assert(y.size() == g.size() && y.size() == num.size() &&
         y.size() == den.size());
  NeumaierSum acc;
  for (std::size_t i = 0; i < y.size(); ++i) {
    acc.add(num[i] * (y[i] - g[i]) / den[i]);
  }
  return acc.value();
}

void gemv_scalar(std::span<const double> a, std::size_t rows,
                 std::size_t cols, std::span<const double> x, double bias,
                 std::span<double> out) {
  assert(a.size() == rows * cols && x.size() == cols && out.size() == rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = a.data() + r * cols;
    NeumaierSum acc;
    acc.add(bias);
    for (std::size_t c = 0; c < cols; ++c) acc.add(row[c] * x[c]);
    out[r] = acc.value();
  }
}

void axpy_scalar(double alpha, std::span<const double> x,
                 std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{sum_scalar, dot_scalar,
                                 weighted_residual_sum_scalar, gemv_scalar,
                                 axpy_scalar};
  return table;
}

}  // namespace iwc::kernels
