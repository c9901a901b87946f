#include "bocpdms/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace bocpdms::kernels {
namespace {

constexpr KernelTable kScalar{Isa::scalar, scalar::dot, scalar::axpy, scalar::givens_column,
                              scalar::max_value};
#if defined(__x86_64__) || defined(_M_X64)
constexpr KernelTable kAvx2{Isa::avx2, avx2::dot, avx2::axpy, avx2::givens_column,
                            avx2::max_value};
#endif
#if defined(__aarch64__)
constexpr KernelTable kNeon{Isa::neon, neon::dot, neon::axpy, neon::givens_column,
                            neon::max_value};
#endif

const KernelTable* detect() {
  if (const char* forced = std::getenv("BOCPDMS_KERNELS")) {
    const std::string want(forced);
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
      if (want == name(isa) && supported(isa)) return &table(isa);
    }
  }
#if defined(__aarch64__)
  return &kNeon;
#else
  if (supported(Isa::avx2)) return &table(Isa::avx2);
  return &kScalar;
#endif
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{detect()};
  return ptr;
}

}  // namespace

std::string_view name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool supported(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) {
    throw std::invalid_argument("kernel ISA not supported on this CPU: " + std::string(name(isa)));
  }
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::avx2: return kAvx2;
#endif
#if defined(__aarch64__)
    case Isa::neon: return kNeon;
#endif
    default: return kScalar;
  }
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void select(Isa isa) { current().store(&table(isa), std::memory_order_relaxed); }

}  // namespace bocpdms::kernels
