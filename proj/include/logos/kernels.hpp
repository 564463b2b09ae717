#pragma once

// Dense double-precision inner loops used by the tensor engine.
//
// Every routine has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant. The variant is picked once at startup from CPUID; setting
// LOGOSKIT_KERNELS=scalar in the environment forces the reference path.
// All matrices are contiguous and row-major; every routine accumulates into
// its output (c += ...), callers zero it when they need a plain product.

#include <cstddef>
#include <string_view>

namespace logos::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  // c[m x n] += a[m x k] * b[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // c[m x n] += a[m x k] * b[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // c[m x n] += a[k x m]^T * b[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();
#if defined(LOGOS_HAVE_AVX2_KERNELS)
const KernelTable& avx2_table();
#endif

bool isa_supported(Isa isa);
const KernelTable& table_for(Isa isa);

// The table used by the tensor engine.
const KernelTable& active();
void set_active(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace logos::kernels
