#include "bocpdms/kernels.hpp"

namespace bocpdms::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void givens_column(double* col, double* x, std::size_t n, double c, double s) {
  const double inv_c = 1.0 / c;
  for (std::size_t i = 0; i < n; ++i) {
    const double updated = (col[i] + s * x[i]) * inv_c;
    col[i] = updated;
    x[i] = c * x[i] - s * updated;
  }
}

double max_value(const double* x, std::size_t n) {
  double best = x[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (x[i] > best) best = x[i];
  }
  return best;
}

}  // namespace bocpdms::kernels::scalar
