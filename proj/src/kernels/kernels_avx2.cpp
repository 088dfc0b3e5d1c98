// AVX2/FMA variants. Functions carry a target attribute instead of the whole
// TU being built with -mavx2, so no inline helper instantiated here can leak
// AVX2 code into the scalar path through COMDAT folding.

#include <cassert>
#include <cmath>
#include <cstddef>

#include "iwc/kernels.hpp"

#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
#define IWC_HAVE_AVX2_KERNELS 1
#include <immintrin.h>
#endif

namespace iwc::kernels {

#if IWC_HAVE_AVX2_KERNELS
namespace {

#define IWC_AVX2 __attribute__((target("avx2,fma")))

struct Lanes {
  __m256d sum;
  __m256d comp;
};

IWC_AVX2 inline void lane_add(Lanes& acc, __m256d v) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d t = _mm256_add_pd(acc.sum, v);
  const __m256d abs_s = _mm256_andnot_pd(sign_mask, acc.sum);
  const __m256d abs_v = _mm256_andnot_pd(sign_mask, v);
  const __m256d s_big = _mm256_cmp_pd(abs_s, abs_v, _CMP_GE_OQ);
  const __m256d when_s_big = _mm256_add_pd(_mm256_sub_pd(acc.sum, t), v);
  const __m256d when_v_big = _mm256_add_pd(_mm256_sub_pd(v, t), acc.sum);
  acc.comp =
      _mm256_add_pd(acc.comp, _mm256_blendv_pd(when_v_big, when_s_big, s_big));
  acc.sum = t;
}

struct Scalar {
  double sum = 0.0;
  double comp = 0.0;
};

IWC_AVX2 inline void scalar_add(Scalar& acc, double v) {
  const double t = acc.sum + v;
  if (std::fabs(acc.sum) >= std::fabs(v)) {
    acc.comp += (acc.sum - t) + v;
  } else {
    acc.comp += (v - t) + acc.sum;
  }
  acc.sum = t;
}

IWC_AVX2 inline double finish(const Lanes& lanes, Scalar tail) {
  alignas(32) double s[4];
  alignas(32) double c[4];
  _mm256_store_pd(s, lanes.sum);
  _mm256_store_pd(c, lanes.comp);
  Scalar acc;
  for (int k = 0; k < 4; ++k) scalar_add(acc, s[k]);
  scalar_add(acc, tail.sum);
  double comp = acc.comp + tail.comp;
  for (int k = 0; k < 4; ++k) comp += c[k];
  return acc.sum + comp;
}

IWC_AVX2 double sum_avx2(std::span<const double> x) {
  const double* p = x.data();
  const std::size_t n = x.size();
  Lanes lanes{_mm256_setzero_pd(), _mm256_setzero_pd()};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) lane_add(lanes, _mm256_loadu_pd(p + i));
  Scalar tail;
  for (; i < n; ++i) scalar_add(tail, p[i]);
  return finish(lanes, tail);
}

IWC_AVX2 double dot_avx2(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  const double* pa = a.data();
  const double* pb = b.data();
  const std::size_t n = a.size();
  Lanes lanes{_mm256_setzero_pd(), _mm256_setzero_pd()};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    lane_add(lanes,
             _mm256_mul_pd(_mm256_loadu_pd(pa + i), _mm256_loadu_pd(pb + i)));
  }
  Scalar tail;
  for (; i < n; ++i) scalar_add(tail, pa[i] * pb[i]);
  return finish(lanes, tail);
}

IWC_AVX2 double weighted_residual_sum_avx2(std::span<const double> y,
                                           std::span<const double> g,
                                           std::span<const double> num,
                                           std::span<const double> den) {
  assert(y.size() == g.size() && y.size() == num.size() &&
         y.size() == den.size());
  const std::size_t n = y.size();
  Lanes lanes{_mm256_setzero_pd(), _mm256_setzero_pd()};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_sub_pd(_mm256_loadu_pd(y.data() + i),
                                    _mm256_loadu_pd(g.data() + i));
    const __m256d w = _mm256_mul_pd(_mm256_loadu_pd(num.data() + i), r);
    lane_add(lanes, _mm256_div_pd(w, _mm256_loadu_pd(den.data() + i)));
  }
  Scalar tail;
  for (; i < n; ++i) scalar_add(tail, num[i] * (y[i] - g[i]) / den[i]);
  return finish(lanes, tail);
}

IWC_AVX2 void gemv_avx2(std::span<const double> a, std::size_t rows,
                        std::size_t cols, std::span<const double> x,
                        double bias, std::span<double> out) {
  assert(a.size() == rows * cols && x.size() == cols && out.size() == rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = a.data() + r * cols;
    Lanes lanes{_mm256_setzero_pd(), _mm256_setzero_pd()};
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      lane_add(lanes, _mm256_mul_pd(_mm256_loadu_pd(row + c),
                                    _mm256_loadu_pd(x.data() + c)));
    }
    Scalar tail;
    scalar_add(tail, bias);
    for (; c < cols; ++c) scalar_add(tail, row[c] * x[c]);
    out[r] = finish(lanes, tail);
  }
}

IWC_AVX2 void axpy_avx2(double alpha, std::span<const double> x,
                        std::span<double> y) {
  assert(x.size() == y.size());
  const std::size_t n = x.size();
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    // mul + add rather than fma so the result matches the scalar reference.
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x.data() + i));
    _mm256_storeu_pd(y.data() + i,
                     _mm256_add_pd(_mm256_loadu_pd(y.data() + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{sum_avx2, dot_avx2, weighted_residual_sum_avx2,
                                 gemv_avx2, axpy_avx2};
  static const bool supported = cpu_has_avx2();
  return supported ? &table : nullptr;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace iwc::kernels
