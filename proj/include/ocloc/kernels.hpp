#pragma once

#include <cstdint>

namespace ocloc::kern {

// Hot float32 kernels behind a function-pointer table. The scalar table is
// the reference; the AVX2 table must match it within the tolerances pinned
// in test_kernels. Dispatch is decided once per process.
//
// GEMM layouts are row-major. "n"/"t" name the operand orientation:
//   gemm_nn: C[M,N] (+)= A[M,K]        * B[K,N]
//   gemm_nt: C[M,N] (+)= A[M,K]        * B[N,K]^T
//   gemm_tn: C[M,N] (+)= A[K,M]^T      * B[K,N]
struct Ops {
  void (*gemm_nn)(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                  const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate);
  void (*gemm_nt)(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                  const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate);
  void (*gemm_tn)(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                  const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate);
  void (*silu)(const float* x, float* y, int64_t n);
  // gx += gy * d silu(x)/dx
  void (*silu_bwd)(const float* x, const float* gy, float* gx, int64_t n);
  void (*sigmoid)(const float* x, float* y, int64_t n);
  void (*vexp)(const float* x, float* y, int64_t n);
  void (*add)(const float* a, const float* b, float* y, int64_t n);
  void (*mul)(const float* a, const float* b, float* y, int64_t n);
  void (*axpy)(float alpha, const float* x, float* y, int64_t n);
  void (*scale)(float alpha, float* x, int64_t n);
  float (*sum)(const float* x, int64_t n);
  float (*dot)(const float* a, const float* b, int64_t n);
  void (*adam)(float* p, const float* g, float* m, float* v, int64_t n, float lr,
               float beta1, float beta2, float eps, float bias1, float bias2);
};

const Ops& scalar_ops();
const Ops& avx2_ops();
// Scalar unless AVX2+FMA are available; OCLOC_FORCE_SCALAR=1 forces scalar.
const Ops& ops();
bool avx2_selected();

}  // namespace ocloc::kern

namespace ocloc::blas {

// Generic scalar fallbacks let the whole model instantiate with double for
// finite-difference oracles; float routes to the dispatched kernels.
template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b,
             int64_t ldb, T* c, int64_t ldc, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * ldc + j] : T(0);
      for (int64_t p = 0; p < k; ++p) {
        acc += a[i * lda + p] * b[p * ldb + j];
      }
      c[i * ldc + j] = acc;
    }
  }
}

template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b,
             int64_t ldb, T* c, int64_t ldc, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * ldc + j] : T(0);
      for (int64_t p = 0; p < k; ++p) {
        acc += a[i * lda + p] * b[j * ldb + p];
      }
      c[i * ldc + j] = acc;
    }
  }
}

template <typename T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b,
             int64_t ldb, T* c, int64_t ldc, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * ldc + j] : T(0);
      for (int64_t p = 0; p < k; ++p) {
        acc += a[p * lda + i] * b[p * ldb + j];
      }
      c[i * ldc + j] = acc;
    }
  }
}

template <>
inline void gemm_nn<float>(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                           const float* b, int64_t ldb, float* c, int64_t ldc,
                           bool accumulate) {
  kern::ops().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <>
inline void gemm_nt<float>(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                           const float* b, int64_t ldb, float* c, int64_t ldc,
                           bool accumulate) {
  kern::ops().gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <>
inline void gemm_tn<float>(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
                           const float* b, int64_t ldb, float* c, int64_t ldc,
                           bool accumulate) {
  kern::ops().gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace ocloc::blas
