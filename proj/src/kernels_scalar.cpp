#include "ocloc/kernels.hpp"

#include <cmath>

namespace ocloc::kern {
namespace {

void gemm_nn_s(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
               const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    if (!accumulate) {
      for (int64_t j = 0; j < n; ++j) {
        crow[j] = 0.0f;
      }
    }
    for (int64_t p = 0; p < k; ++p) {
      const float av = a[i * lda + p];
      const float* brow = b + p * ldb;
      for (int64_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_nt_s(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
               const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      float acc = accumulate ? c[i * ldc + j] : 0.0f;
      const float* arow = a + i * lda;
      const float* brow = b + j * ldb;
      for (int64_t p = 0; p < k; ++p) {
        acc += arow[p] * brow[p];
      }
      c[i * ldc + j] = acc;
    }
  }
}

void gemm_tn_s(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
               const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate) {
  if (!accumulate) {
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        c[i * ldc + j] = 0.0f;
      }
    }
  }
  for (int64_t p = 0; p < k; ++p) {
    const float* brow = b + p * ldb;
    for (int64_t i = 0; i < m; ++i) {
      const float av = a[p * lda + i];
      float* crow = c + i * ldc;
      for (int64_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

void silu_s(const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] = x[i] / (1.0f + std::exp(-x[i]));
  }
}

void silu_bwd_s(const float* x, const float* gy, float* gx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    const float s = 1.0f / (1.0f + std::exp(-x[i]));
    gx[i] += gy[i] * s * (1.0f + x[i] * (1.0f - s));
  }
}

void sigmoid_s(const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] = 1.0f / (1.0f + std::exp(-x[i]));
  }
}

void vexp_s(const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i]);
  }
}

void add_s(const float* a, const float* b, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] = a[i] + b[i];
  }
}

void mul_s(const float* a, const float* b, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] = a[i] * b[i];
  }
}

void axpy_s(float alpha, const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}

void scale_s(float alpha, float* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    x[i] *= alpha;
  }
}

float sum_s(const float* x, int64_t n) {
  float acc = 0.0f;
  for (int64_t i = 0; i < n; ++i) {
    acc += x[i];
  }
  return acc;
}

float dot_s(const float* a, const float* b, int64_t n) {
  float acc = 0.0f;
  for (int64_t i = 0; i < n; ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

void adam_s(float* p, const float* g, float* m, float* v, int64_t n, float lr,
            float beta1, float beta2, float eps, float bias1, float bias2) {
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    const float mh = m[i] / bias1;
    const float vh = v[i] / bias2;
    p[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops table = {gemm_nn_s, gemm_nt_s, gemm_tn_s, silu_s, silu_bwd_s,
                            sigmoid_s, vexp_s,    add_s,     mul_s,  axpy_s,
                            scale_s,   sum_s,     dot_s,     adam_s};
  return table;
}

}  // namespace ocloc::kern
