#include "ocloc/kernels.hpp"

#include <immintrin.h>

#include <cmath>

// AVX2+FMA variants of the scalar reference kernels. Compiled with
// -mavx2 -mfma; only reached when dispatch confirmed CPU support.
namespace ocloc::kern {
namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

// exp on 8 lanes, Cephes-style polynomial; matches std::exp to ~1e-7 rel
// over the clamped range.
inline __m256 exp8(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-87.3365478515625f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);
  __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);

  __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, z, _mm256_add_ps(x, one));

  __m256i n = _mm256_cvtps_epi32(fx);
  n = _mm256_add_epi32(n, _mm256_set1_epi32(127));
  n = _mm256_slli_epi32(n, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(n));
}

inline __m256 sigmoid8(__m256 x) {
  const __m256 one = _mm256_set1_ps(1.0f);
  __m256 e = exp8(_mm256_sub_ps(_mm256_setzero_ps(), x));
  return _mm256_div_ps(one, _mm256_add_ps(one, e));
}

// Shared inner kernel: C[rows, 0..n) += sum_p aval(r, p) * B[p, :].
// astep = 1 walks A rows (nn); astep = lda walks A columns (tn).
inline void accum_rows(int64_t rows, int64_t n, int64_t k, const float* abase,
                       int64_t arow_stride, int64_t astep, const float* b, int64_t ldb,
                       float* c, int64_t ldc) {
  int64_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256 acc[4][2];
    for (int64_t r = 0; r < rows; ++r) {
      acc[r][0] = _mm256_loadu_ps(c + r * ldc + j);
      acc[r][1] = _mm256_loadu_ps(c + r * ldc + j + 8);
    }
    for (int64_t p = 0; p < k; ++p) {
      const __m256 b0 = _mm256_loadu_ps(b + p * ldb + j);
      const __m256 b1 = _mm256_loadu_ps(b + p * ldb + j + 8);
      for (int64_t r = 0; r < rows; ++r) {
        const __m256 av = _mm256_set1_ps(abase[r * arow_stride + p * astep]);
        acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
      }
    }
    for (int64_t r = 0; r < rows; ++r) {
      _mm256_storeu_ps(c + r * ldc + j, acc[r][0]);
      _mm256_storeu_ps(c + r * ldc + j + 8, acc[r][1]);
    }
  }
  for (; j + 8 <= n; j += 8) {
    __m256 acc[4];
    for (int64_t r = 0; r < rows; ++r) {
      acc[r] = _mm256_loadu_ps(c + r * ldc + j);
    }
    for (int64_t p = 0; p < k; ++p) {
      const __m256 b0 = _mm256_loadu_ps(b + p * ldb + j);
      for (int64_t r = 0; r < rows; ++r) {
        const __m256 av = _mm256_set1_ps(abase[r * arow_stride + p * astep]);
        acc[r] = _mm256_fmadd_ps(av, b0, acc[r]);
      }
    }
    for (int64_t r = 0; r < rows; ++r) {
      _mm256_storeu_ps(c + r * ldc + j, acc[r]);
    }
  }
  if (j < n) {
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t jj = j; jj < n; ++jj) {
        float acc = c[r * ldc + jj];
        for (int64_t p = 0; p < k; ++p) {
          acc += abase[r * arow_stride + p * astep] * b[p * ldb + jj];
        }
        c[r * ldc + jj] = acc;
      }
    }
  }
}

void zero_c(int64_t m, int64_t n, float* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      c[i * ldc + j] = 0.0f;
    }
  }
}

void gemm_nn_v(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
               const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate) {
  if (!accumulate) {
    zero_c(m, n, c, ldc);
  }
  int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    accum_rows(4, n, k, a + i * lda, lda, 1, b, ldb, c + i * ldc, ldc);
  }
  if (i < m) {
    accum_rows(m - i, n, k, a + i * lda, lda, 1, b, ldb, c + i * ldc, ldc);
  }
}

void gemm_tn_v(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
               const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate) {
  if (!accumulate) {
    zero_c(m, n, c, ldc);
  }
  int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    accum_rows(4, n, k, a + i, 1, lda, b, ldb, c + i * ldc, ldc);
  }
  if (i < m) {
    accum_rows(m - i, n, k, a + i, 1, lda, b, ldb, c + i * ldc, ldc);
  }
}

void gemm_nt_v(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
               const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * lda;
    int64_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256 acc0 = _mm256_setzero_ps();
      __m256 acc1 = _mm256_setzero_ps();
      __m256 acc2 = _mm256_setzero_ps();
      __m256 acc3 = _mm256_setzero_ps();
      const float* b0 = b + j * ldb;
      const float* b1 = b + (j + 1) * ldb;
      const float* b2 = b + (j + 2) * ldb;
      const float* b3 = b + (j + 3) * ldb;
      int64_t p = 0;
      for (; p + 8 <= k; p += 8) {
        const __m256 av = _mm256_loadu_ps(arow + p);
        acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + p), acc0);
        acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + p), acc1);
        acc2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + p), acc2);
        acc3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + p), acc3);
      }
      float s0 = hsum8(acc0);
      float s1 = hsum8(acc1);
      float s2 = hsum8(acc2);
      float s3 = hsum8(acc3);
      for (; p < k; ++p) {
        s0 += arow[p] * b0[p];
        s1 += arow[p] * b1[p];
        s2 += arow[p] * b2[p];
        s3 += arow[p] * b3[p];
      }
      float* crow = c + i * ldc + j;
      if (accumulate) {
        crow[0] += s0;
        crow[1] += s1;
        crow[2] += s2;
        crow[3] += s3;
      } else {
        crow[0] = s0;
        crow[1] = s1;
        crow[2] = s2;
        crow[3] = s3;
      }
    }
    for (; j < n; ++j) {
      const float* brow = b + j * ldb;
      __m256 acc = _mm256_setzero_ps();
      int64_t p = 0;
      for (; p + 8 <= k; p += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), acc);
      }
      float s = hsum8(acc);
      for (; p < k; ++p) {
        s += arow[p] * brow[p];
      }
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + s : s;
    }
  }
}

void silu_v(const float* x, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    _mm256_storeu_ps(y + i, _mm256_mul_ps(xv, sigmoid8(xv)));
  }
  for (; i < n; ++i) {
    y[i] = x[i] / (1.0f + std::exp(-x[i]));
  }
}

void silu_bwd_v(const float* x, const float* gy, float* gx, int64_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    const __m256 s = sigmoid8(xv);
    const __m256 d = _mm256_mul_ps(s, _mm256_fmadd_ps(xv, _mm256_sub_ps(one, s), one));
    _mm256_storeu_ps(gx + i, _mm256_fmadd_ps(_mm256_loadu_ps(gy + i), d, _mm256_loadu_ps(gx + i)));
  }
  for (; i < n; ++i) {
    const float s = 1.0f / (1.0f + std::exp(-x[i]));
    gx[i] += gy[i] * s * (1.0f + x[i] * (1.0f - s));
  }
}

void sigmoid_v(const float* x, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, sigmoid8(_mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) {
    y[i] = 1.0f / (1.0f + std::exp(-x[i]));
  }
}

void vexp_v(const float* x, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, exp8(_mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) {
    y[i] = std::exp(x[i]);
  }
}

void add_v(const float* a, const float* b, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) {
    y[i] = a[i] + b[i];
  }
}

void mul_v(const float* a, const float* b, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) {
    y[i] = a[i] * b[i];
  }
}

void axpy_v(float alpha, const float* x, float* y, int64_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}

void scale_v(float alpha, float* x, int64_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) {
    x[i] *= alpha;
  }
}

float sum_v(const float* x, int64_t n) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  }
  float s = hsum8(acc);
  for (; i < n; ++i) {
    s += x[i];
  }
  return s;
}

float dot_v(const float* a, const float* b, int64_t n) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  }
  float s = hsum8(acc);
  for (; i < n; ++i) {
    s += a[i] * b[i];
  }
  return s;
}

void adam_v(float* p, const float* g, float* m, float* v, int64_t n, float lr,
            float beta1, float beta2, float eps, float bias1, float bias2) {
  const __m256 b1 = _mm256_set1_ps(beta1);
  const __m256 b2 = _mm256_set1_ps(beta2);
  const __m256 ob1 = _mm256_set1_ps(1.0f - beta1);
  const __m256 ob2 = _mm256_set1_ps(1.0f - beta2);
  const __m256 rb1 = _mm256_set1_ps(1.0f / bias1);
  const __m256 rb2 = _mm256_set1_ps(1.0f / bias2);
  const __m256 lrv = _mm256_set1_ps(lr);
  const __m256 epsv = _mm256_set1_ps(eps);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(g + i);
    __m256 mv = _mm256_fmadd_ps(ob1, gv, _mm256_mul_ps(b1, _mm256_loadu_ps(m + i)));
    __m256 vv = _mm256_fmadd_ps(ob2, _mm256_mul_ps(gv, gv), _mm256_mul_ps(b2, _mm256_loadu_ps(v + i)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mh = _mm256_mul_ps(mv, rb1);
    const __m256 vh = _mm256_mul_ps(vv, rb2);
    const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(vh), epsv);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(lrv, mh), den);
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
  }
  if (i < n) {
    scalar_ops().adam(p + i, g + i, m + i, v + i, n - i, lr, beta1, beta2, eps, bias1, bias2);
  }
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops table = {gemm_nn_v, gemm_nt_v, gemm_tn_v, silu_v, silu_bwd_v,
                            sigmoid_v, vexp_v,    add_v,     mul_v,  axpy_v,
                            scale_v,   sum_v,     dot_v,     adam_v};
  return table;
}

}  // namespace ocloc::kern
