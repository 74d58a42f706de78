#pragma once

// Dense float32 inner loops used by the tensor engine, the STFT front end and
// the optimizer. Every kernel has a portable scalar reference and, on x86-64,
// an AVX2+FMA variant; the active table is chosen once at startup.

#include <cstddef>
#include <string_view>

namespace sqac::simd {

struct AdamWCoeffs {
  float lr;
  float beta1;
  float beta2;
  float eps;
  float weight_decay;
  float bias_correction1;  // 1 - beta1^t
  float bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  std::string_view name;

  float (*dot)(std::size_t n, const float* x, const float* y);

  // y += a * x
  void (*axpy)(std::size_t n, float a, const float* x, float* y);

  // C[M x N] += A[M x K] * B[K x N], all row-major with leading dimensions.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                  const float* a, std::size_t lda,
                  const float* b, std::size_t ldb,
                  float* c, std::size_t ldc);

  // C[M x N] += A[M x K] * B[N x K]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k,
                  const float* a, std::size_t lda,
                  const float* b, std::size_t ldb,
                  float* c, std::size_t ldc);

  // Decoupled-decay AdamW update of n parameters in place.
  void (*adamw)(std::size_t n, float* w, const float* g, float* m, float* v,
                const AdamWCoeffs& c);
};

const KernelTable& scalar_kernels();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_kernels();

// The table used by the library. Honors SQAC_SIMD=scalar for debugging.
const KernelTable& kernels();

}  // namespace sqac::simd
