#include "sqac/simd/kernels.hpp"

#include <cmath>

namespace sqac::simd {
namespace {

float dot_scalar(std::size_t n, const float* x, const float* y) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(std::size_t n, float a, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemm_nn_scalar(std::size_t m, std::size_t n, std::size_t k,
                    const float* a, std::size_t lda,
                    const float* b, std::size_t ldb,
                    float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = a[i * lda + p];
      if (aip == 0.0f) continue;
      const float* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt_scalar(std::size_t m, std::size_t n, std::size_t k,
                    const float* a, std::size_t lda,
                    const float* b, std::size_t ldb,
                    float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      c[i * ldc + j] += dot_scalar(k, a + i * lda, b + j * ldb);
}

void adamw_scalar(std::size_t n, float* w, const float* g, float* m, float* v,
                  const AdamWCoeffs& c) {
  const float step = c.lr / c.bias_correction1;
  const float inv_bc2 = 1.0f / c.bias_correction2;
  const float decay = 1.0f - c.lr * c.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = c.beta1 * m[i] + (1.0f - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0f - c.beta2) * g[i] * g[i];
    const float denom = std::sqrt(v[i] * inv_bc2) + c.eps;
    w[i] = w[i] * decay - step * m[i] / denom;
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      "scalar", dot_scalar, axpy_scalar, gemm_nn_scalar, gemm_nt_scalar, adamw_scalar};
  return table;
}

}  // namespace sqac::simd
