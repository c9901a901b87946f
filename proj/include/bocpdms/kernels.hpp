#pragma once

// Data-parallel inner loops used by the conjugate regression updates.
//
// Every kernel has a scalar reference implementation. Vectorised variants
// (AVX2+FMA on x86-64, NEON on aarch64) are selected once at runtime from the
// CPU feature flags; BOCPDMS_KERNELS=scalar|avx2|neon overrides the choice.

#include <cstddef>
#include <span>
#include <string_view>

namespace bocpdms::kernels {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // One column of a Cholesky rank-1 update:
  //   col[i] = (col[i] + s * x[i]) / c;  x[i] = c * x[i] - s * col[i]
  void (*givens_column)(double* col, double* x, std::size_t n, double c, double s);
  // max_i x[i]; n > 0
  double (*max_value)(const double* x, std::size_t n);
};

std::string_view name(Isa isa);
bool supported(Isa isa);

// Throws std::invalid_argument if the ISA is not available on this machine.
const KernelTable& table(Isa isa);

// The table chosen at startup (or by select()).
const KernelTable& active();
void select(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void givens_column(double* col, double* x, std::size_t n, double c, double s);
double max_value(const double* x, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void givens_column(double* col, double* x, std::size_t n, double c, double s);
double max_value(const double* x, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void givens_column(double* col, double* x, std::size_t n, double c, double s);
double max_value(const double* x, std::size_t n);
}  // namespace neon
#endif

}  // namespace bocpdms::kernels
