// Compiled with -mavx2 -mfma; only reached through avx2_kernels() after a
// runtime CPU check.

#include "sqac/simd/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace sqac::simd {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

float dot_avx2(std::size_t n, const float* x, const float* y) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  __m256 acc2 = _mm256_setzero_ps();
  __m256 acc3 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    acc2 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 16), _mm256_loadu_ps(y + i + 16), acc2);
    acc3 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 24), _mm256_loadu_ps(y + i + 24), acc3);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  float acc = hsum(_mm256_add_ps(_mm256_add_ps(acc0, acc1), _mm256_add_ps(acc2, acc3)));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_avx2(std::size_t n, float a, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    _mm256_storeu_ps(y + i + 8,
                     _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8)));
  }
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

// 4 x 16 register tile: eight accumulators, two B loads and four broadcasts
// per k.
inline void tile_4x16(std::size_t k, const float* a, std::size_t lda,
                      const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  __m256 c00 = _mm256_loadu_ps(c), c01 = _mm256_loadu_ps(c + 8);
  __m256 c10 = _mm256_loadu_ps(c + ldc), c11 = _mm256_loadu_ps(c + ldc + 8);
  __m256 c20 = _mm256_loadu_ps(c + 2 * ldc), c21 = _mm256_loadu_ps(c + 2 * ldc + 8);
  __m256 c30 = _mm256_loadu_ps(c + 3 * ldc), c31 = _mm256_loadu_ps(c + 3 * ldc + 8);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
    __m256 av = _mm256_broadcast_ss(a + p);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a + lda + p);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a + 2 * lda + p);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a + 3 * lda + p);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
  }
  _mm256_storeu_ps(c, c00);
  _mm256_storeu_ps(c + 8, c01);
  _mm256_storeu_ps(c + ldc, c10);
  _mm256_storeu_ps(c + ldc + 8, c11);
  _mm256_storeu_ps(c + 2 * ldc, c20);
  _mm256_storeu_ps(c + 2 * ldc + 8, c21);
  _mm256_storeu_ps(c + 3 * ldc, c30);
  _mm256_storeu_ps(c + 3 * ldc + 8, c31);
}

inline void tile_1x16(std::size_t k, const float* a, const float* b, std::size_t ldb, float* c) {
  __m256 c0 = _mm256_loadu_ps(c), c1 = _mm256_loadu_ps(c + 8);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 av = _mm256_broadcast_ss(a + p);
    c0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + p * ldb), c0);
    c1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + p * ldb + 8), c1);
  }
  _mm256_storeu_ps(c, c0);
  _mm256_storeu_ps(c + 8, c1);
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k,
                  const float* a, std::size_t lda,
                  const float* b, std::size_t ldb,
                  float* c, std::size_t ldc) {
  const std::size_t n16 = n - n % 16;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4)
    for (std::size_t j = 0; j < n16; j += 16)
      tile_4x16(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n16; j += 16) tile_1x16(k, a + i * lda, b + j, ldb, c + i * ldc + j);
  if (n16 == n) return;
  // Column remainder: row-wise axpy over the tail.
  for (std::size_t r = 0; r < m; ++r) {
    float* crow = c + r * ldc + n16;
    for (std::size_t p = 0; p < k; ++p) {
      const float arp = a[r * lda + p];
      const float* brow = b + p * ldb + n16;
      for (std::size_t j = 0; j < n - n16; ++j) crow[j] += arp * brow[j];
    }
  }
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k,
                  const float* a, std::size_t lda,
                  const float* b, std::size_t ldb,
                  float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot_avx2(k, a + i * lda, b + j * ldb);
}

void adamw_avx2(std::size_t n, float* w, const float* g, float* m, float* v,
                const AdamWCoeffs& c) {
  const float step = c.lr / c.bias_correction1;
  const float inv_bc2 = 1.0f / c.bias_correction2;
  const float decay = 1.0f - c.lr * c.weight_decay;
  const __m256 vb1 = _mm256_set1_ps(c.beta1), vb1c = _mm256_set1_ps(1.0f - c.beta1);
  const __m256 vb2 = _mm256_set1_ps(c.beta2), vb2c = _mm256_set1_ps(1.0f - c.beta2);
  const __m256 vstep = _mm256_set1_ps(step), vinv = _mm256_set1_ps(inv_bc2);
  const __m256 veps = _mm256_set1_ps(c.eps), vdecay = _mm256_set1_ps(decay);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gi = _mm256_loadu_ps(g + i);
    const __m256 mi = _mm256_fmadd_ps(vb1, _mm256_loadu_ps(m + i), _mm256_mul_ps(vb1c, gi));
    const __m256 vi = _mm256_fmadd_ps(vb2, _mm256_loadu_ps(v + i),
                                      _mm256_mul_ps(vb2c, _mm256_mul_ps(gi, gi)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vi, vinv)), veps);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(vstep, mi), denom);
    _mm256_storeu_ps(w + i, _mm256_sub_ps(_mm256_mul_ps(_mm256_loadu_ps(w + i), vdecay), upd));
  }
  for (; i < n; ++i) {
    m[i] = c.beta1 * m[i] + (1.0f - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0f - c.beta2) * g[i] * g[i];
    const float denom = std::sqrt(v[i] * inv_bc2) + c.eps;
    w[i] = w[i] * decay - step * m[i] / denom;
  }
}

}  // namespace

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{
      "avx2", dot_avx2, axpy_avx2, gemm_nn_avx2, gemm_nt_avx2, adamw_avx2};
  return table;
}

}  // namespace sqac::simd
