#include "bocpdms/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace bocpdms::kernels::neon {

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double sum = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void givens_column(double* col, double* x, std::size_t n, double c, double s) {
  const double inv_c = 1.0 / c;
  const float64x2_t vc = vdupq_n_f64(c);
  const float64x2_t vs = vdupq_n_f64(s);
  const float64x2_t vinv = vdupq_n_f64(inv_c);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vx = vld1q_f64(x + i);
    const float64x2_t updated = vmulq_f64(vfmaq_f64(vld1q_f64(col + i), vs, vx), vinv);
    vst1q_f64(col + i, updated);
    vst1q_f64(x + i, vfmsq_f64(vmulq_f64(vc, vx), vs, updated));
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
  if (n >= 2) {
    float64x2_t vbest = vld1q_f64(x);
    for (i = 2; i + 2 <= n; i += 2) vbest = vmaxq_f64(vbest, vld1q_f64(x + i));
    best = vmaxvq_f64(vbest);
  }
  for (; i < n; ++i) {
    if (x[i] > best) best = x[i];
  }
  return best;
}

}  // namespace bocpdms::kernels::neon
#endif
