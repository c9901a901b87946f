// Compiled with -mavx2 -mfma; only called after a runtime CPU check.
#include "bocpdms/kernels.hpp"

#include <immintrin.h>

namespace bocpdms::kernels::avx2 {

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  acc0 = _mm256_add_pd(acc0, acc1);
  __m128d lo = _mm256_castpd256_pd128(acc0);
  __m128d hi = _mm256_extractf128_pd(acc0, 1);
  lo = _mm_add_pd(lo, hi);
  lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
  double sum = _mm_cvtsd_f64(lo);
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void givens_column(double* col, double* x, std::size_t n, double c, double s) {
  const double inv_c = 1.0 / c;
  const __m256d vc = _mm256_set1_pd(c);
  const __m256d vs = _mm256_set1_pd(s);
  const __m256d vinv = _mm256_set1_pd(inv_c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d vcol = _mm256_loadu_pd(col + i);
    const __m256d updated = _mm256_mul_pd(_mm256_fmadd_pd(vs, vx, vcol), vinv);
    _mm256_storeu_pd(col + i, updated);
    _mm256_storeu_pd(x + i, _mm256_fnmadd_pd(vs, updated, _mm256_mul_pd(vc, vx)));
  }
  for (; i < n; ++i) {
    const double updated = (col[i] + s * x[i]) * inv_c;
    col[i] = updated;
    x[i] = c * x[i] - s * updated;
  }
}

double max_value(const double* x, std::size_t n) {
  std::size_t i = 0;
  double best = x[0];
  if (n >= 4) {
    __m256d vbest = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) vbest = _mm256_max_pd(vbest, _mm256_loadu_pd(x + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, vbest);
    best = lanes[0];
    for (double v : lanes) {
      if (v > best) best = v;
    }
  }
  for (; i < n; ++i) {
    if (x[i] > best) best = x[i];
  }
  return best;
}

}  // namespace bocpdms::kernels::avx2
