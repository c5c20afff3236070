#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ocloc/kernels.hpp"
#include "ocloc/tensor.hpp"

namespace ocloc {

namespace detail {

template <typename T>
void v_silu(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] = x[i] / (T(1) + std::exp(-x[i]));
  }
}
template <>
inline void v_silu<float>(const float* x, float* y, int64_t n) {
  kern::ops().silu(x, y, n);
}

template <typename T>
void v_silu_bwd(const T* x, const T* gy, T* gx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + std::exp(-x[i]));
    gx[i] += gy[i] * s * (T(1) + x[i] * (T(1) - s));
  }
}
template <>
inline void v_silu_bwd<float>(const float* x, const float* gy, float* gx, int64_t n) {
  kern::ops().silu_bwd(x, gy, gx, n);
}

template <typename T>
void v_sigmoid(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] = T(1) / (T(1) + std::exp(-x[i]));
  }
}
template <>
inline void v_sigmoid<float>(const float* x, float* y, int64_t n) {
  kern::ops().sigmoid(x, y, n);
}

template <typename T>
void v_exp(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i]);
  }
}
template <>
inline void v_exp<float>(const float* x, float* y, int64_t n) {
  kern::ops().vexp(x, y, n);
}

template <typename T>
void v_axpy(T alpha, const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}
template <>
inline void v_axpy<float>(float alpha, const float* x, float* y, int64_t n) {
  kern::ops().axpy(alpha, x, y, n);
}

// digamma / trigamma on doubles: upward recurrence into the asymptotic
// range, then the standard series. Checked against frozen references in
// test_graph.
inline double digamma(double x) {
  double r = 0.0;
  while (x < 10.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return r + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12.0 -
                 inv2 * (1.0 / 120.0 -
                         inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
}

inline double trigamma(double x) {
  double r = 0.0;
  while (x < 10.0) {
    r += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return r +
         inv * (1.0 +
                inv * (0.5 +
                       inv * (1.0 / 6.0 -
                              inv2 * (1.0 / 30.0 -
                                      inv2 * (1.0 / 42.0 -
                                              inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))))));
}

}  // namespace detail

using Id = int32_t;  // node handle, shared by every Graph instantiation

// Eager tape autodiff. Values are computed at op-creation time; backward
// closures replay in reverse id order, so parents always come before
// children and a single descending sweep is a valid topological order.
template <typename T>
class Graph {
 public:
  using Id = int32_t;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  // When set, ordered_weights evaluates its smooth surrogate in the forward
  // pass as well, making the whole graph differentiable. Finite-difference
  // checks flip this on; training leaves it off (straight-through).
  bool st_surrogate_forward = false;

  Id constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  Id scalar(T v) {
    Tensor<T> t({1});
    t[0] = v;
    return constant(std::move(t));
  }

  // Parameter leaf. The graph copies the current value; backward() adds the
  // accumulated gradient into *external_grad.
  Id param(const Tensor<T>& value, Tensor<T>* external_grad) {
    Id id = push(value, true, nullptr);
    sinks_.push_back({id, external_grad});
    return id;
  }

  const Tensor<T>& val(Id id) const { return nodes_[static_cast<size_t>(id)].val; }
  Tensor<T>& grad(Id id) { return gref(id); }
  bool grad_enabled() const { return grad_enabled_; }
  size_t node_count() const { return nodes_.size(); }

  void backward(Id root) {
    if (!grad_enabled_) {
      throw std::logic_error("backward on grad-disabled graph");
    }
    if (val(root).size() != 1) {
      throw std::logic_error("backward root must be scalar");
    }
    gref(root)[0] = T(1);
    for (Id id = root; id >= 0; --id) {
      Node& nd = nodes_[static_cast<size_t>(id)];
      if (nd.bwd && nd.needs_grad && nd.grad.size() > 0) {
        nd.bwd(*this);
      }
    }
    for (auto& [id, ext] : sinks_) {
      Node& nd = nodes_[static_cast<size_t>(id)];
      if (nd.grad.size() > 0) {
        detail::v_axpy(T(1), nd.grad.ptr(), ext->ptr(), nd.grad.size());
      }
    }
  }

  // ---- elementwise ----

  Id add(Id a, Id b) {
    check_same(a, b);
    Tensor<T> out = val(a);
    detail::v_axpy(T(1), val(b).ptr(), out.ptr(), out.size());
    return make(std::move(out), {a, b}, [a, b](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      g.acc(a, gy);
      g.acc(b, gy);
    });
  }

  Id sub(Id a, Id b) {
    check_same(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] -= bv[i];
    }
    return make(std::move(out), {a, b}, [a, b](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      g.acc(a, gy);
      detail::v_axpy(T(-1), gy.ptr(), g.gref(b).ptr(), gy.size());
    });
  }

  Id mul(Id a, Id b) {
    check_same(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] *= bv[i];
    }
    return make(std::move(out), {a, b}, [a, b](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      const Tensor<T>& av = g.val(a);
      const Tensor<T>& bv2 = g.val(b);
      Tensor<T>& ga = g.gref(a);
      Tensor<T>& gb = g.gref(b);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * bv2[i];
        gb[i] += gy[i] * av[i];
      }
    });
  }

  Id add_scalar(Id a, T c) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] += c;
    }
    return make(std::move(out), {a}, [a](Graph& g, Id self) { g.acc(a, g.gref(self)); });
  }

  Id mul_scalar(Id a, T c) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] *= c;
    }
    return make(std::move(out), {a}, [a, c](Graph& g, Id self) {
      detail::v_axpy(c, g.gref(self).ptr(), g.gref(a).ptr(), g.gref(self).size());
    });
  }

  Id neg(Id a) { return mul_scalar(a, T(-1)); }

  Id silu(Id a) {
    Tensor<T> out(val(a).shape);
    detail::v_silu(val(a).ptr(), out.ptr(), out.size());
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      detail::v_silu_bwd(g.val(a).ptr(), g.gref(self).ptr(), g.gref(a).ptr(), g.gref(self).size());
    });
  }

  Id sigmoid(Id a) {
    Tensor<T> out(val(a).shape);
    detail::v_sigmoid(val(a).ptr(), out.ptr(), out.size());
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& y = g.val(self);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * y[i] * (T(1) - y[i]);
      }
    });
  }

  Id tanh_(Id a) {
    Tensor<T> out(val(a).shape);
    const Tensor<T>& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = std::tanh(x[i]);
    }
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& y = g.val(self);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * (T(1) - y[i] * y[i]);
      }
    });
  }

  Id exp_(Id a) {
    Tensor<T> out(val(a).shape);
    detail::v_exp(val(a).ptr(), out.ptr(), out.size());
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& y = g.val(self);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * y[i];
      }
    });
  }

  // log(x + shift); shift > 0 keeps the op finite at x = 0.
  Id log_(Id a, T shift = T(0)) {
    Tensor<T> out(val(a).shape);
    const Tensor<T>& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = std::log(x[i] + shift);
    }
    return make(std::move(out), {a}, [a, shift](Graph& g, Id self) {
      const Tensor<T>& x2 = g.val(a);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] / (x2[i] + shift);
      }
    });
  }

  Id softplus(Id a) {
    Tensor<T> out(val(a).shape);
    const Tensor<T>& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = x[i] > T(20) ? x[i] : std::log1p(std::exp(x[i]));
    }
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& x2 = g.val(a);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] / (T(1) + std::exp(-x2[i]));
      }
    });
  }

  Id square(Id a) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] *= out[i];
    }
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& x = g.val(a);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * T(2) * x[i];
      }
    });
  }

  Id sqrt_(Id a) {
    Tensor<T> out(val(a).shape);
    const Tensor<T>& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = std::sqrt(x[i]);
    }
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& y = g.val(self);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] / (T(2) * y[i]);
      }
    });
  }

  Id sin_(Id a) {
    Tensor<T> out(val(a).shape);
    const Tensor<T>& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = std::sin(x[i]);
    }
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& x2 = g.val(a);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * std::cos(x2[i]);
      }
    });
  }

  // Hard clamp; gradient passes only where the input was inside [lo, hi].
  Id clamp(Id a, T lo, T hi) {
    Tensor<T> out(val(a).shape);
    const Tensor<T>& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = std::min(hi, std::max(lo, x[i]));
    }
    return make(std::move(out), {a}, [a, lo, hi](Graph& g, Id self) {
      const Tensor<T>& x2 = g.val(a);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        if (x2[i] >= lo && x2[i] <= hi) {
          ga[i] += gy[i];
        }
      }
    });
  }

  Id lgamma_(Id a) {
    Tensor<T> out(val(a).shape);
    const Tensor<T>& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(std::lgamma(static_cast<double>(x[i])));
    }
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& x2 = g.val(a);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * static_cast<T>(detail::digamma(static_cast<double>(x2[i])));
      }
    });
  }

  Id digamma_(Id a) {
    Tensor<T> out(val(a).shape);
    const Tensor<T>& x = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(detail::digamma(static_cast<double>(x[i])));
    }
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const Tensor<T>& x2 = g.val(a);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * static_cast<T>(detail::trigamma(static_cast<double>(x2[i])));
      }
    });
  }

  // ---- shape ops ----

  Id reshape(Id a, std::vector<int64_t> shape) {
    Tensor<T> out = val(a).reshaped(std::move(shape));
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      detail::v_axpy(T(1), g.gref(self).ptr(), g.gref(a).ptr(), g.gref(self).size());
    });
  }

  Id concat_lastdim(Id a, Id b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    const int64_t ca = av.shape.back();
    const int64_t cb = bv.shape.back();
    const int64_t rows = av.size() / ca;
    if (bv.size() / cb != rows) {
      throw std::invalid_argument("concat row mismatch");
    }
    std::vector<int64_t> shape = av.shape;
    shape.back() = ca + cb;
    Tensor<T> out(shape);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < ca; ++j) {
        out[r * (ca + cb) + j] = av[r * ca + j];
      }
      for (int64_t j = 0; j < cb; ++j) {
        out[r * (ca + cb) + ca + j] = bv[r * cb + j];
      }
    }
    return make(std::move(out), {a, b}, [a, b, ca, cb, rows](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      Tensor<T>& gb = g.gref(b);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < ca; ++j) {
          ga[r * ca + j] += gy[r * (ca + cb) + j];
        }
        for (int64_t j = 0; j < cb; ++j) {
          gb[r * cb + j] += gy[r * (ca + cb) + ca + j];
        }
      }
    });
  }

  Id slice_lastdim(Id a, int64_t start, int64_t len) {
    const Tensor<T>& av = val(a);
    const int64_t c = av.shape.back();
    const int64_t rows = av.size() / c;
    std::vector<int64_t> shape = av.shape;
    shape.back() = len;
    Tensor<T> out(shape);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < len; ++j) {
        out[r * len + j] = av[r * c + start + j];
      }
    }
    return make(std::move(out), {a}, [a, start, len, c, rows](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < len; ++j) {
          ga[r * c + start + j] += gy[r * len + j];
        }
      }
    });
  }

  Id rows_gather(Id a, std::vector<int64_t> idx) {
    const Tensor<T>& av = val(a);
    const int64_t c = av.shape.back();
    Tensor<T> out({static_cast<int64_t>(idx.size()), c});
    for (size_t r = 0; r < idx.size(); ++r) {
      for (int64_t j = 0; j < c; ++j) {
        out[static_cast<int64_t>(r) * c + j] = av[idx[r] * c + j];
      }
    }
    return make(std::move(out), {a}, [a, idx = std::move(idx), c](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (size_t r = 0; r < idx.size(); ++r) {
        for (int64_t j = 0; j < c; ++j) {
          ga[idx[r] * c + j] += gy[static_cast<int64_t>(r) * c + j];
        }
      }
    });
  }

  // [pre, mid, post] -> [pre, post], summing the middle axis.
  Id sum_mid(Id a, int64_t pre, int64_t mid, int64_t post) {
    check_count(a, pre * mid * post);
    Tensor<T> out({pre, post});
    const Tensor<T>& x = val(a);
    for (int64_t p = 0; p < pre; ++p) {
      for (int64_t m = 0; m < mid; ++m) {
        const T* src = x.ptr() + (p * mid + m) * post;
        T* dst = out.ptr() + p * post;
        for (int64_t q = 0; q < post; ++q) {
          dst[q] += src[q];
        }
      }
    }
    return make(std::move(out), {a}, [a, pre, mid, post](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t p = 0; p < pre; ++p) {
        for (int64_t m = 0; m < mid; ++m) {
          T* dst = ga.ptr() + (p * mid + m) * post;
          const T* src = gy.ptr() + p * post;
          for (int64_t q = 0; q < post; ++q) {
            dst[q] += src[q];
          }
        }
      }
    });
  }

  Id mean_mid(Id a, int64_t pre, int64_t mid, int64_t post) {
    return mul_scalar(sum_mid(a, pre, mid, post), T(1) / static_cast<T>(mid));
  }

  Id broadcast_mid(Id a, int64_t pre, int64_t mid, int64_t post) {
    check_count(a, pre * post);
    Tensor<T> out({pre, mid, post});
    const Tensor<T>& x = val(a);
    for (int64_t p = 0; p < pre; ++p) {
      for (int64_t m = 0; m < mid; ++m) {
        const T* src = x.ptr() + p * post;
        T* dst = out.ptr() + (p * mid + m) * post;
        for (int64_t q = 0; q < post; ++q) {
          dst[q] = src[q];
        }
      }
    }
    return make(std::move(out), {a}, [a, pre, mid, post](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t p = 0; p < pre; ++p) {
        for (int64_t m = 0; m < mid; ++m) {
          const T* src = gy.ptr() + (p * mid + m) * post;
          T* dst = ga.ptr() + p * post;
          for (int64_t q = 0; q < post; ++q) {
            dst[q] += src[q];
          }
        }
      }
    });
  }

  Id sum_all(Id a) {
    Tensor<T> out({1});
    const Tensor<T>& x = val(a);
    // Double accumulation: loss terms sum many pixels and float32 order
    // effects would leak into checked oracle values.
    double acc = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
      acc += static_cast<double>(x[i]);
    }
    out[0] = static_cast<T>(acc);
    return make(std::move(out), {a}, [a](Graph& g, Id self) {
      const T gy = g.gref(self)[0];
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < ga.size(); ++i) {
        ga[i] += gy;
      }
    });
  }

  Id add_n(const std::vector<Id>& xs) {
    if (xs.empty()) {
      throw std::invalid_argument("add_n of nothing");
    }
    Id acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) {
      acc = add(acc, xs[i]);
    }
    return acc;
  }

  // out[r, c] = x[r] * y[r, c]; x is any shape with R elements.
  Id mul_bcast_last(Id x, Id y) {
    const int64_t r = val(x).size();
    const int64_t c = val(y).size() / r;
    if (val(y).size() != r * c) {
      throw std::invalid_argument("mul_bcast_last shape mismatch");
    }
    Tensor<T> out(val(y).shape);
    const Tensor<T>& xv = val(x);
    const Tensor<T>& yv = val(y);
    for (int64_t i = 0; i < r; ++i) {
      for (int64_t j = 0; j < c; ++j) {
        out[i * c + j] = xv[i] * yv[i * c + j];
      }
    }
    return make(std::move(out), {x, y}, [x, y, r, c](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      const Tensor<T>& xv2 = g.val(x);
      const Tensor<T>& yv2 = g.val(y);
      Tensor<T>& gx = g.gref(x);
      Tensor<T>& gyy = g.gref(y);
      for (int64_t i = 0; i < r; ++i) {
        T s = T(0);
        for (int64_t j = 0; j < c; ++j) {
          s += gy[i * c + j] * yv2[i * c + j];
          gyy[i * c + j] += gy[i * c + j] * xv2[i];
        }
        gx[i] += s;
      }
    });
  }

  // ---- linear algebra ----

  Id matmul(Id a, Id b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    const int64_t m = av.shape[0];
    const int64_t k = av.shape[1];
    const int64_t n = bv.shape[1];
    if (bv.shape[0] != k) {
      throw std::invalid_argument("matmul inner dim mismatch");
    }
    Tensor<T> out({m, n});
    blas::gemm_nn(m, n, k, av.ptr(), k, bv.ptr(), n, out.ptr(), n, false);
    return make(std::move(out), {a, b}, [a, b, m, n, k](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      blas::gemm_nt(m, k, n, gy.ptr(), n, g.val(b).ptr(), n, g.gref(a).ptr(), k, true);
      blas::gemm_tn(k, n, m, g.val(a).ptr(), k, gy.ptr(), n, g.gref(b).ptr(), n, true);
    });
  }

  Id add_bias(Id x, Id b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& bv = val(b);
    const int64_t c = bv.size();
    const int64_t rows = xv.size() / c;
    Tensor<T> out = xv;
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < c; ++j) {
        out[r * c + j] += bv[j];
      }
    }
    return make(std::move(out), {x, b}, [x, b, rows, c](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      g.acc(x, gy);
      Tensor<T>& gb = g.gref(b);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < c; ++j) {
          gb[j] += gy[r * c + j];
        }
      }
    });
  }

  // Batched C[s] = A[s] * B[s]; a: [S,M,K], b: [S,K,N].
  Id bmm(Id a, Id b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    const int64_t s = av.shape[0];
    const int64_t m = av.shape[1];
    const int64_t k = av.shape[2];
    const int64_t n = bv.shape[2];
    if (bv.shape[0] != s || bv.shape[1] != k) {
      throw std::invalid_argument("bmm shape mismatch");
    }
    Tensor<T> out({s, m, n});
    for (int64_t i = 0; i < s; ++i) {
      blas::gemm_nn(m, n, k, av.ptr() + i * m * k, k, bv.ptr() + i * k * n, n,
                    out.ptr() + i * m * n, n, false);
    }
    return make(std::move(out), {a, b}, [a, b, s, m, n, k](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      const Tensor<T>& av2 = g.val(a);
      const Tensor<T>& bv2 = g.val(b);
      Tensor<T>& ga = g.gref(a);
      Tensor<T>& gb = g.gref(b);
      for (int64_t i = 0; i < s; ++i) {
        blas::gemm_nt(m, k, n, gy.ptr() + i * m * n, n, bv2.ptr() + i * k * n, n,
                      ga.ptr() + i * m * k, k, true);
        blas::gemm_tn(k, n, m, av2.ptr() + i * m * k, k, gy.ptr() + i * m * n, n,
                      gb.ptr() + i * k * n, n, true);
      }
    });
  }

  // Batched C[s] = A[s] * B[s]^T; a: [S,M,K], b: [S,N,K].
  Id bmm_nt(Id a, Id b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    const int64_t s = av.shape[0];
    const int64_t m = av.shape[1];
    const int64_t k = av.shape[2];
    const int64_t n = bv.shape[1];
    if (bv.shape[0] != s || bv.shape[2] != k) {
      throw std::invalid_argument("bmm_nt shape mismatch");
    }
    Tensor<T> out({s, m, n});
    for (int64_t i = 0; i < s; ++i) {
      blas::gemm_nt(m, n, k, av.ptr() + i * m * k, k, bv.ptr() + i * n * k, k,
                    out.ptr() + i * m * n, n, false);
    }
    return make(std::move(out), {a, b}, [a, b, s, m, n, k](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      const Tensor<T>& av2 = g.val(a);
      const Tensor<T>& bv2 = g.val(b);
      Tensor<T>& ga = g.gref(a);
      Tensor<T>& gb = g.gref(b);
      for (int64_t i = 0; i < s; ++i) {
        blas::gemm_nn(m, k, n, gy.ptr() + i * m * n, n, bv2.ptr() + i * n * k, k,
                      ga.ptr() + i * m * k, k, true);
        blas::gemm_tn(n, k, m, gy.ptr() + i * m * n, n, av2.ptr() + i * m * k, k,
                      gb.ptr() + i * n * k, k, true);
      }
    });
  }

  // ---- structured ops ----

  Id softmax_lastdim(Id a) {
    const Tensor<T>& x = val(a);
    const int64_t c = x.shape.back();
    const int64_t rows = x.size() / c;
    Tensor<T> out(x.shape);
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = x.ptr() + r * c;
      T* yr = out.ptr() + r * c;
      T mx = xr[0];
      for (int64_t j = 1; j < c; ++j) {
        mx = std::max(mx, xr[j]);
      }
      for (int64_t j = 0; j < c; ++j) {
        yr[j] = xr[j] - mx;
      }
      detail::v_exp(yr, yr, c);
      T s = T(0);
      for (int64_t j = 0; j < c; ++j) {
        s += yr[j];
      }
      const T inv = T(1) / s;
      for (int64_t j = 0; j < c; ++j) {
        yr[j] *= inv;
      }
    }
    return make(std::move(out), {a}, [a, rows, c](Graph& g, Id self) {
      const Tensor<T>& y = g.val(self);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y.ptr() + r * c;
        const T* gr = gy.ptr() + r * c;
        T* gar = ga.ptr() + r * c;
        T dot = T(0);
        for (int64_t j = 0; j < c; ++j) {
          dot += yr[j] * gr[j];
        }
        for (int64_t j = 0; j < c; ++j) {
          gar[j] += yr[j] * (gr[j] - dot);
        }
      }
    });
  }

  Id layernorm(Id x, Id gamma, Id beta, T eps = T(1e-5)) {
    const Tensor<T>& xv = val(x);
    const int64_t c = val(gamma).size();
    const int64_t rows = xv.size() / c;
    Tensor<T> out(xv.shape);
    const Tensor<T>& gm = val(gamma);
    const Tensor<T>& bt = val(beta);
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = xv.ptr() + r * c;
      T* yr = out.ptr() + r * c;
      T mu = T(0);
      for (int64_t j = 0; j < c; ++j) {
        mu += xr[j];
      }
      mu /= static_cast<T>(c);
      T var = T(0);
      for (int64_t j = 0; j < c; ++j) {
        var += (xr[j] - mu) * (xr[j] - mu);
      }
      var /= static_cast<T>(c);
      const T inv = T(1) / std::sqrt(var + eps);
      for (int64_t j = 0; j < c; ++j) {
        yr[j] = (xr[j] - mu) * inv * gm[j] + bt[j];
      }
    }
    return make(std::move(out), {x, gamma, beta}, [x, gamma, beta, rows, c, eps](Graph& g, Id self) {
      const Tensor<T>& xv2 = g.val(x);
      const Tensor<T>& gm2 = g.val(gamma);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& gx = g.gref(x);
      Tensor<T>& gg = g.gref(gamma);
      Tensor<T>& gb = g.gref(beta);
      std::vector<T> xc(static_cast<size_t>(c));
      for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xv2.ptr() + r * c;
        const T* gr = gy.ptr() + r * c;
        T mu = T(0);
        for (int64_t j = 0; j < c; ++j) {
          mu += xr[j];
        }
        mu /= static_cast<T>(c);
        T var = T(0);
        for (int64_t j = 0; j < c; ++j) {
          var += (xr[j] - mu) * (xr[j] - mu);
        }
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + eps);
        T mean_d = T(0);
        T mean_dx = T(0);
        for (int64_t j = 0; j < c; ++j) {
          xc[static_cast<size_t>(j)] = (xr[j] - mu) * inv;
          const T d = gr[j] * gm2[j];
          mean_d += d;
          mean_dx += d * xc[static_cast<size_t>(j)];
        }
        mean_d /= static_cast<T>(c);
        mean_dx /= static_cast<T>(c);
        T* gxr = gx.ptr() + r * c;
        for (int64_t j = 0; j < c; ++j) {
          const T d = gr[j] * gm2[j];
          gxr[j] += inv * (d - mean_d - xc[static_cast<size_t>(j)] * mean_dx);
          gg[j] += gr[j] * xc[static_cast<size_t>(j)];
          gb[j] += gr[j];
        }
      }
    });
  }

  // [S, Tk, D] -> [S*H, Tk, D/H]
  Id split_heads(Id a, int64_t heads) {
    const Tensor<T>& x = val(a);
    const int64_t s = x.shape[0];
    const int64_t tk = x.shape[1];
    const int64_t d = x.shape[2];
    const int64_t dh = d / heads;
    if (d % heads != 0) {
      throw std::invalid_argument("heads must divide dim");
    }
    Tensor<T> out({s * heads, tk, dh});
    for (int64_t i = 0; i < s; ++i) {
      for (int64_t h = 0; h < heads; ++h) {
        for (int64_t t = 0; t < tk; ++t) {
          const T* src = x.ptr() + (i * tk + t) * d + h * dh;
          T* dst = out.ptr() + ((i * heads + h) * tk + t) * dh;
          for (int64_t j = 0; j < dh; ++j) {
            dst[j] = src[j];
          }
        }
      }
    }
    return make(std::move(out), {a}, [a, s, tk, d, dh, heads](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t h = 0; h < heads; ++h) {
          for (int64_t t = 0; t < tk; ++t) {
            T* dst = ga.ptr() + (i * tk + t) * d + h * dh;
            const T* src = gy.ptr() + ((i * heads + h) * tk + t) * dh;
            for (int64_t j = 0; j < dh; ++j) {
              dst[j] += src[j];
            }
          }
        }
      }
    });
  }

  // [S*H, Tk, D/H] -> [S, Tk, D]
  Id merge_heads(Id a, int64_t heads) {
    const Tensor<T>& x = val(a);
    const int64_t sh = x.shape[0];
    const int64_t tk = x.shape[1];
    const int64_t dh = x.shape[2];
    const int64_t s = sh / heads;
    const int64_t d = dh * heads;
    Tensor<T> out({s, tk, d});
    for (int64_t i = 0; i < s; ++i) {
      for (int64_t h = 0; h < heads; ++h) {
        for (int64_t t = 0; t < tk; ++t) {
          const T* src = x.ptr() + ((i * heads + h) * tk + t) * dh;
          T* dst = out.ptr() + (i * tk + t) * d + h * dh;
          for (int64_t j = 0; j < dh; ++j) {
            dst[j] = src[j];
          }
        }
      }
    }
    return make(std::move(out), {a}, [a, s, tk, d, dh, heads](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t h = 0; h < heads; ++h) {
          for (int64_t t = 0; t < tk; ++t) {
            T* dst = ga.ptr() + ((i * heads + h) * tk + t) * dh;
            const T* src = gy.ptr() + (i * tk + t) * d + h * dh;
            for (int64_t j = 0; j < dh; ++j) {
              dst[j] += src[j];
            }
          }
        }
      }
    });
  }

  Id transpose_mid(Id a) {
    const Tensor<T>& x = val(a);
    const int64_t s = x.shape[0];
    const int64_t m = x.shape[1];
    const int64_t n = x.shape[2];
    Tensor<T> out({s, n, m});
    for (int64_t i = 0; i < s; ++i) {
      for (int64_t r = 0; r < m; ++r) {
        for (int64_t j = 0; j < n; ++j) {
          out[(i * n + j) * m + r] = x[(i * m + r) * n + j];
        }
      }
    }
    return make(std::move(out), {a}, [a, s, m, n](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t r = 0; r < m; ++r) {
          for (int64_t j = 0; j < n; ++j) {
            ga[(i * m + r) * n + j] += gy[(i * n + j) * m + r];
          }
        }
      }
    });
  }

  // [S, C, H, W] -> [S, H*W, C]
  Id nchw_to_nlc(Id a) {
    const Tensor<T>& x = val(a);
    const int64_t s = x.shape[0];
    const int64_t c = x.shape[1];
    const int64_t hw = x.shape[2] * x.shape[3];
    Tensor<T> out({s, hw, c});
    for (int64_t i = 0; i < s; ++i) {
      for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t n = 0; n < hw; ++n) {
          out[(i * hw + n) * c + ch] = x[(i * c + ch) * hw + n];
        }
      }
    }
    return make(std::move(out), {a}, [a, s, c, hw](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t ch = 0; ch < c; ++ch) {
          for (int64_t n = 0; n < hw; ++n) {
            ga[(i * c + ch) * hw + n] += gy[(i * hw + n) * c + ch];
          }
        }
      }
    });
  }

  // [S, L, C] -> [S, C, G, G] with L = G*G
  Id nlc_to_nchw(Id a, int64_t g_h, int64_t g_w) {
    const Tensor<T>& x = val(a);
    const int64_t s = x.shape[0];
    const int64_t l = x.shape[1];
    const int64_t c = x.shape[2];
    if (l != g_h * g_w) {
      throw std::invalid_argument("nlc_to_nchw grid mismatch");
    }
    Tensor<T> out({s, c, g_h, g_w});
    for (int64_t i = 0; i < s; ++i) {
      for (int64_t n = 0; n < l; ++n) {
        for (int64_t ch = 0; ch < c; ++ch) {
          out[(i * c + ch) * l + n] = x[(i * l + n) * c + ch];
        }
      }
    }
    return make(std::move(out), {a}, [a, s, l, c](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t n = 0; n < l; ++n) {
          for (int64_t ch = 0; ch < c; ++ch) {
            ga[(i * l + n) * c + ch] += gy[(i * c + ch) * l + n];
          }
        }
      }
    });
  }

  // K inputs of [S, Q] stacked into [S, K, Q].
  Id stack_mid(const std::vector<Id>& xs) {
    const int64_t kk = static_cast<int64_t>(xs.size());
    const int64_t s = val(xs[0]).shape[0];
    const int64_t q = val(xs[0]).size() / s;
    Tensor<T> out({s, kk, q});
    for (int64_t k = 0; k < kk; ++k) {
      const Tensor<T>& x = val(xs[static_cast<size_t>(k)]);
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t j = 0; j < q; ++j) {
          out[(i * kk + k) * q + j] = x[i * q + j];
        }
      }
    }
    return make(std::move(out), xs, [xs, s, q, kk](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      for (int64_t k = 0; k < kk; ++k) {
        Tensor<T>& gx = g.gref(xs[static_cast<size_t>(k)]);
        for (int64_t i = 0; i < s; ++i) {
          for (int64_t j = 0; j < q; ++j) {
            gx[i * q + j] += gy[(i * kk + k) * q + j];
          }
        }
      }
    });
  }

  // [S, Ka, Q] ++ [S, Kb, Q] -> [S, Ka+Kb, Q] along the middle axis.
  Id concat_mid(Id a, Id b) {
    const Tensor<T>& xa = val(a);
    const Tensor<T>& xb = val(b);
    const int64_t s = xa.shape[0];
    const int64_t ka = xa.shape[1];
    const int64_t kb = xb.shape[1];
    const int64_t q = xa.size() / (s * ka);
    if (xb.shape[0] != s || xb.size() / (s * kb) != q) {
      throw std::invalid_argument("concat_mid shape mismatch");
    }
    Tensor<T> out({s, ka + kb, q});
    for (int64_t i = 0; i < s; ++i) {
      std::copy(xa.ptr() + i * ka * q, xa.ptr() + (i + 1) * ka * q,
                out.ptr() + i * (ka + kb) * q);
      std::copy(xb.ptr() + i * kb * q, xb.ptr() + (i + 1) * kb * q,
                out.ptr() + i * (ka + kb) * q + ka * q);
    }
    return make(std::move(out), {a, b}, [a, b, s, ka, kb, q](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& ga = g.gref(a);
      Tensor<T>& gb = g.gref(b);
      for (int64_t i = 0; i < s; ++i) {
        const T* base = gy.ptr() + i * (ka + kb) * q;
        detail::v_axpy(T(1), base, ga.ptr() + i * ka * q, ka * q);
        detail::v_axpy(T(1), base + ka * q, gb.ptr() + i * kb * q, kb * q);
      }
    });
  }

  // ---- convolutions (NCHW) ----

  Id conv2d(Id x, Id w, Id b, int64_t stride, int64_t pad) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const int64_t bn = xv.shape[0];
    const int64_t ci = xv.shape[1];
    const int64_t h = xv.shape[2];
    const int64_t wd = xv.shape[3];
    const int64_t co = wv.shape[0];
    const int64_t kh = wv.shape[2];
    const int64_t kw = wv.shape[3];
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    const int64_t band = ci * kh * kw;
    if (wv.shape[1] != ci) {
      throw std::invalid_argument("conv2d channel mismatch");
    }
    Tensor<T> out({bn, co, ho, wo});
    std::vector<T> cols(static_cast<size_t>(ho * wo * band));
    std::vector<T> ymat(static_cast<size_t>(ho * wo * co));
    const Tensor<T>& bias = val(b);
    for (int64_t img = 0; img < bn; ++img) {
      im2col(xv.ptr() + img * ci * h * wd, ci, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
      blas::gemm_nt(ho * wo, co, band, cols.data(), band, wv.ptr(), band, ymat.data(), co, false);
      T* dst = out.ptr() + img * co * ho * wo;
      for (int64_t oc = 0; oc < co; ++oc) {
        for (int64_t n = 0; n < ho * wo; ++n) {
          dst[oc * ho * wo + n] = ymat[static_cast<size_t>(n * co + oc)] + bias[oc];
        }
      }
    }
    return make(std::move(out), {x, w, b},
                [x, w, b, bn, ci, h, wd, co, kh, kw, stride, pad, ho, wo, band](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      const Tensor<T>& xv2 = g.val(x);
      const Tensor<T>& wv2 = g.val(w);
      Tensor<T>& gx = g.gref(x);
      Tensor<T>& gw = g.gref(w);
      Tensor<T>& gb = g.gref(b);
      std::vector<T> cols(static_cast<size_t>(ho * wo * band));
      std::vector<T> gmat(static_cast<size_t>(ho * wo * co));
      std::vector<T> gcols(static_cast<size_t>(ho * wo * band));
      for (int64_t img = 0; img < bn; ++img) {
        const T* gimg = gy.ptr() + img * co * ho * wo;
        for (int64_t oc = 0; oc < co; ++oc) {
          T s = T(0);
          for (int64_t n = 0; n < ho * wo; ++n) {
            gmat[static_cast<size_t>(n * co + oc)] = gimg[oc * ho * wo + n];
            s += gimg[oc * ho * wo + n];
          }
          gb[oc] += s;
        }
        im2col(xv2.ptr() + img * ci * h * wd, ci, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
        blas::gemm_tn(co, band, ho * wo, gmat.data(), co, cols.data(), band, gw.ptr(), band, true);
        blas::gemm_nn(ho * wo, band, co, gmat.data(), co, wv2.ptr(), band, gcols.data(), band, false);
        col2im_add(gcols.data(), ci, h, wd, kh, kw, stride, pad, ho, wo,
                   gx.ptr() + img * ci * h * wd);
      }
    });
  }

  // Weight layout [Ci, Co, kh, kw]; out[oy, ox] gathers from in[iy, ix]
  // with oy = iy*stride - pad + ky.
  Id conv_transpose2d(Id x, Id w, Id b, int64_t stride, int64_t pad) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const int64_t bn = xv.shape[0];
    const int64_t ci = xv.shape[1];
    const int64_t hi = xv.shape[2];
    const int64_t wi = xv.shape[3];
    const int64_t co = wv.shape[1];
    const int64_t kh = wv.shape[2];
    const int64_t kw = wv.shape[3];
    const int64_t ho = (hi - 1) * stride - 2 * pad + kh;
    const int64_t wo = (wi - 1) * stride - 2 * pad + kw;
    const int64_t band = co * kh * kw;
    if (wv.shape[0] != ci) {
      throw std::invalid_argument("conv_transpose2d channel mismatch");
    }
    Tensor<T> out({bn, co, ho, wo});
    std::vector<T> cols(static_cast<size_t>(hi * wi * band));
    const Tensor<T>& bias = val(b);
    for (int64_t img = 0; img < bn; ++img) {
      const T* ximg = xv.ptr() + img * ci * hi * wi;
      blas::gemm_tn(hi * wi, band, ci, ximg, hi * wi, wv.ptr(), band, cols.data(), band, false);
      T* dst = out.ptr() + img * co * ho * wo;
      for (int64_t oc = 0; oc < co; ++oc) {
        for (int64_t n = 0; n < ho * wo; ++n) {
          dst[oc * ho * wo + n] = bias[oc];
        }
      }
      for (int64_t iy = 0; iy < hi; ++iy) {
        for (int64_t ix = 0; ix < wi; ++ix) {
          const T* crow = cols.data() + (iy * wi + ix) * band;
          for (int64_t oc = 0; oc < co; ++oc) {
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t oy = iy * stride - pad + ky;
              if (oy < 0 || oy >= ho) {
                continue;
              }
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ox = ix * stride - pad + kx;
                if (ox < 0 || ox >= wo) {
                  continue;
                }
                dst[(oc * ho + oy) * wo + ox] += crow[(oc * kh + ky) * kw + kx];
              }
            }
          }
        }
      }
    }
    return make(std::move(out), {x, w, b},
                [x, w, b, bn, ci, hi, wi, co, kh, kw, stride, pad, ho, wo, band](Graph& g, Id self) {
      const Tensor<T>& gy = g.gref(self);
      const Tensor<T>& xv2 = g.val(x);
      const Tensor<T>& wv2 = g.val(w);
      Tensor<T>& gx = g.gref(x);
      Tensor<T>& gw = g.gref(w);
      Tensor<T>& gb = g.gref(b);
      std::vector<T> gcols(static_cast<size_t>(hi * wi * band));
      std::vector<T> gxmat(static_cast<size_t>(hi * wi * ci));
      for (int64_t img = 0; img < bn; ++img) {
        const T* gimg = gy.ptr() + img * co * ho * wo;
        for (int64_t oc = 0; oc < co; ++oc) {
          T s = T(0);
          for (int64_t n = 0; n < ho * wo; ++n) {
            s += gimg[oc * ho * wo + n];
          }
          gb[oc] += s;
        }
        for (int64_t iy = 0; iy < hi; ++iy) {
          for (int64_t ix = 0; ix < wi; ++ix) {
            T* crow = gcols.data() + (iy * wi + ix) * band;
            for (int64_t oc = 0; oc < co; ++oc) {
              for (int64_t ky = 0; ky < kh; ++ky) {
                const int64_t oy = iy * stride - pad + ky;
                for (int64_t kx = 0; kx < kw; ++kx) {
                  const int64_t ox = ix * stride - pad + kx;
                  crow[(oc * kh + ky) * kw + kx] =
                      (oy < 0 || oy >= ho || ox < 0 || ox >= wo)
                          ? T(0)
                          : gimg[(oc * ho + oy) * wo + ox];
                }
              }
            }
          }
        }
        blas::gemm_nt(hi * wi, ci, band, gcols.data(), band, wv2.ptr(), band, gxmat.data(), ci, false);
        T* gximg = gx.ptr() + img * ci * hi * wi;
        for (int64_t n = 0; n < hi * wi; ++n) {
          for (int64_t ic = 0; ic < ci; ++ic) {
            gximg[ic * hi * wi + n] += gxmat[static_cast<size_t>(n * ci + ic)];
          }
        }
        blas::gemm_nn(ci, band, hi * wi, xv2.ptr() + img * ci * hi * wi, hi * wi,
                      gcols.data(), band, gw.ptr(), band, true);
      }
    });
  }

  // ---- model-specific fused ops ----

  // zeta0 = prod_k (1 - s_k); s: [S, K, N] -> [S, N].
  Id prod_one_minus(Id s_in) {
    const Tensor<T>& sv = val(s_in);
    const int64_t s = sv.shape[0];
    const int64_t k = sv.shape[1];
    const int64_t n = sv.shape[2];
    Tensor<T> out({s, n});
    for (int64_t i = 0; i < s; ++i) {
      for (int64_t p = 0; p < n; ++p) {
        T prod = T(1);
        for (int64_t j = 0; j < k; ++j) {
          prod *= T(1) - sv[(i * k + j) * n + p];
        }
        out[i * n + p] = prod;
      }
    }
    return make(std::move(out), {s_in}, [s_in, s, k, n](Graph& g, Id self) {
      const Tensor<T>& sv2 = g.val(s_in);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& gs = g.gref(s_in);
      std::vector<T> pre(static_cast<size_t>(k + 1));
      std::vector<T> suf(static_cast<size_t>(k + 1));
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t p = 0; p < n; ++p) {
          pre[0] = T(1);
          for (int64_t j = 0; j < k; ++j) {
            pre[static_cast<size_t>(j + 1)] =
                pre[static_cast<size_t>(j)] * (T(1) - sv2[(i * k + j) * n + p]);
          }
          suf[static_cast<size_t>(k)] = T(1);
          for (int64_t j = k - 1; j >= 0; --j) {
            suf[static_cast<size_t>(j)] =
                suf[static_cast<size_t>(j + 1)] * (T(1) - sv2[(i * k + j) * n + p]);
          }
          const T go = gy[i * n + p];
          for (int64_t j = 0; j < k; ++j) {
            gs[(i * k + j) * n + p] -=
                go * pre[static_cast<size_t>(j)] * suf[static_cast<size_t>(j + 1)];
          }
        }
      }
    });
  }

  // Occlusion-ordered mixture weights. Forward is the exact product
  //   zeta_k = s_k * prod_{k' occluding k} (1 - s_k'),
  // where k' occludes k iff o_k' > o_k, ties won by the lower slot index.
  // Backward follows the softmax-relaxed surrogate
  //   zeta_k = (1 - zeta0) * s_k exp(o_k) / (sum_k' s_k' exp(o_k') + 1e-12)
  // instead, so ordering stays trainable. With st_surrogate_forward the
  // surrogate is evaluated in the forward pass too (gradient checks only).
  // s: [S,K,N], o: [S,K], zeta0: [S,N].
  Id ordered_weights(Id s_in, Id o_in, Id zeta0) {
    const Tensor<T>& sv = val(s_in);
    const Tensor<T>& ov = val(o_in);
    const Tensor<T>& z0v = val(zeta0);
    const int64_t s = sv.shape[0];
    const int64_t k = sv.shape[1];
    const int64_t n = sv.shape[2];
    Tensor<T> out({s, k, n});
    if (st_surrogate_forward) {
      for (int64_t i = 0; i < s; ++i) {
        double omax = static_cast<double>(ov[i * k]);
        for (int64_t j = 1; j < k; ++j) {
          omax = std::max(omax, static_cast<double>(ov[i * k + j]));
        }
        const double floor_term = 1e-12 * std::exp(-omax);
        for (int64_t p = 0; p < n; ++p) {
          double den = floor_term;
          for (int64_t j = 0; j < k; ++j) {
            den += static_cast<double>(sv[(i * k + j) * n + p]) *
                   std::exp(static_cast<double>(ov[i * k + j]) - omax);
          }
          const double one_m_z0 = 1.0 - static_cast<double>(z0v[i * n + p]);
          for (int64_t j = 0; j < k; ++j) {
            const double q = static_cast<double>(sv[(i * k + j) * n + p]) *
                             std::exp(static_cast<double>(ov[i * k + j]) - omax) / den;
            out[(i * k + j) * n + p] = static_cast<T>(one_m_z0 * q);
          }
        }
      }
    } else {
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t j = 0; j < k; ++j) {
          const T oj = ov[i * k + j];
          for (int64_t p = 0; p < n; ++p) {
            T prod = sv[(i * k + j) * n + p];
            for (int64_t j2 = 0; j2 < k; ++j2) {
              const T o2 = ov[i * k + j2];
              const bool wins = o2 > oj || (o2 == oj && j2 < j);
              if (wins) {
                prod *= T(1) - sv[(i * k + j2) * n + p];
              }
            }
            out[(i * k + j) * n + p] = prod;
          }
        }
      }
    }
    return make(std::move(out), {s_in, o_in, zeta0}, [s_in, o_in, zeta0, s, k, n](Graph& g, Id self) {
      const Tensor<T>& sv2 = g.val(s_in);
      const Tensor<T>& ov2 = g.val(o_in);
      const Tensor<T>& z0 = g.val(zeta0);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& gs = g.gref(s_in);
      Tensor<T>& go = g.gref(o_in);
      Tensor<T>& gz0 = g.gref(zeta0);
      std::vector<double> e(static_cast<size_t>(k));
      std::vector<double> q(static_cast<size_t>(k));
      for (int64_t i = 0; i < s; ++i) {
        double omax = static_cast<double>(ov2[i * k]);
        for (int64_t j = 1; j < k; ++j) {
          omax = std::max(omax, static_cast<double>(ov2[i * k + j]));
        }
        for (int64_t j = 0; j < k; ++j) {
          e[static_cast<size_t>(j)] = std::exp(static_cast<double>(ov2[i * k + j]) - omax);
        }
        const double floor_term = 1e-12 * std::exp(-omax);
        for (int64_t p = 0; p < n; ++p) {
          double den = floor_term;
          for (int64_t j = 0; j < k; ++j) {
            den += static_cast<double>(sv2[(i * k + j) * n + p]) * e[static_cast<size_t>(j)];
          }
          const double one_m_z0 = 1.0 - static_cast<double>(z0[i * n + p]);
          double a = 0.0;
          for (int64_t j = 0; j < k; ++j) {
            q[static_cast<size_t>(j)] =
                static_cast<double>(sv2[(i * k + j) * n + p]) * e[static_cast<size_t>(j)] / den;
            a += static_cast<double>(gy[(i * k + j) * n + p]) * q[static_cast<size_t>(j)];
          }
          for (int64_t j = 0; j < k; ++j) {
            const double gyj = static_cast<double>(gy[(i * k + j) * n + p]);
            gs[(i * k + j) * n + p] +=
                static_cast<T>(one_m_z0 * e[static_cast<size_t>(j)] * (gyj - a) / den);
            go[i * k + j] += static_cast<T>(one_m_z0 * q[static_cast<size_t>(j)] * (gyj - a));
          }
          gz0[i * n + p] += static_cast<T>(-a);
        }
      }
    });
  }

  // Per-slot presence gate: s[bm, k, n] * p[b, k] with bm = b*M + m.
  Id presence_gate(Id s_in, Id p_in, int64_t views) {
    const Tensor<T>& sv = val(s_in);
    const Tensor<T>& pv = val(p_in);
    const int64_t bm = sv.shape[0];
    const int64_t k = sv.shape[1];
    const int64_t n = sv.shape[2];
    if (pv.size() != (bm / views) * k) {
      throw std::invalid_argument("presence_gate shape mismatch");
    }
    Tensor<T> out({bm, k, n});
    for (int64_t i = 0; i < bm; ++i) {
      const int64_t b = i / views;
      for (int64_t j = 0; j < k; ++j) {
        const T p = pv[b * k + j];
        for (int64_t q = 0; q < n; ++q) {
          out[(i * k + j) * n + q] = sv[(i * k + j) * n + q] * p;
        }
      }
    }
    return make(std::move(out), {s_in, p_in}, [s_in, p_in, bm, k, n, views](Graph& g, Id self) {
      const Tensor<T>& sv2 = g.val(s_in);
      const Tensor<T>& pv2 = g.val(p_in);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& gs = g.gref(s_in);
      Tensor<T>& gp = g.gref(p_in);
      for (int64_t i = 0; i < bm; ++i) {
        const int64_t b = i / views;
        for (int64_t j = 0; j < k; ++j) {
          const T p = pv2[b * k + j];
          T acc = T(0);
          for (int64_t q = 0; q < n; ++q) {
            const T go = gy[(i * k + j) * n + q];
            gs[(i * k + j) * n + q] += go * p;
            acc += go * sv2[(i * k + j) * n + q];
          }
          gp[b * k + j] += acc;
        }
      }
    });
  }

  // Pixelwise Gaussian mixture log-density, full normalizing constant
  // included. pi: [S, KK, N], mu: [S, KK, N, C], x: [S, N, C] constant.
  Id mixture_loglik(Id pi, Id mu, const Tensor<T>& x, T sigma) {
    const Tensor<T>& pv = val(pi);
    const Tensor<T>& av = val(mu);
    const int64_t s = pv.shape[0];
    const int64_t kk = pv.shape[1];
    const int64_t n = pv.shape[2];
    const int64_t c = av.shape[3];
    const double inv2s2 = 1.0 / (2.0 * static_cast<double>(sigma) * static_cast<double>(sigma));
    const double lognorm = -0.5 * static_cast<double>(c) *
                           std::log(2.0 * 3.14159265358979323846 * static_cast<double>(sigma) * static_cast<double>(sigma));
    Tensor<T> out({s, n});
    std::vector<double> t(static_cast<size_t>(kk));
    for (int64_t i = 0; i < s; ++i) {
      for (int64_t p = 0; p < n; ++p) {
        double tmax = -1e300;
        for (int64_t j = 0; j < kk; ++j) {
          double sq = 0.0;
          const T* mrow = av.ptr() + ((i * kk + j) * n + p) * c;
          const T* xrow = x.ptr() + (i * n + p) * c;
          for (int64_t ch = 0; ch < c; ++ch) {
            const double d = static_cast<double>(xrow[ch]) - static_cast<double>(mrow[ch]);
            sq += d * d;
          }
          t[static_cast<size_t>(j)] = -sq * inv2s2;
          tmax = std::max(tmax, t[static_cast<size_t>(j)]);
        }
        double acc = 0.0;
        for (int64_t j = 0; j < kk; ++j) {
          acc += static_cast<double>(pv[(i * kk + j) * n + p]) *
                 std::exp(t[static_cast<size_t>(j)] - tmax);
        }
        out[i * n + p] = static_cast<T>(std::log(acc) + tmax + lognorm);
      }
    }
    Id xid = constant(x);
    return make(std::move(out), {pi, mu, xid}, [pi, mu, xid, s, kk, n, c, inv2s2](Graph& g, Id self) {
      const Tensor<T>& pv2 = g.val(pi);
      const Tensor<T>& av2 = g.val(mu);
      const Tensor<T>& xv = g.val(xid);
      const Tensor<T>& gy = g.gref(self);
      Tensor<T>& gp = g.gref(pi);
      Tensor<T>& gm = g.gref(mu);
      std::vector<double> t(static_cast<size_t>(kk));
      for (int64_t i = 0; i < s; ++i) {
        for (int64_t p = 0; p < n; ++p) {
          double tmax = -1e300;
          for (int64_t j = 0; j < kk; ++j) {
            double sq = 0.0;
            const T* mrow = av2.ptr() + ((i * kk + j) * n + p) * c;
            const T* xrow = xv.ptr() + (i * n + p) * c;
            for (int64_t ch = 0; ch < c; ++ch) {
              const double d = static_cast<double>(xrow[ch]) - static_cast<double>(mrow[ch]);
              sq += d * d;
            }
            t[static_cast<size_t>(j)] = -sq * inv2s2;
            tmax = std::max(tmax, t[static_cast<size_t>(j)]);
          }
          double acc = 0.0;
          for (int64_t j = 0; j < kk; ++j) {
            acc += static_cast<double>(pv2[(i * kk + j) * n + p]) *
                   std::exp(t[static_cast<size_t>(j)] - tmax);
          }
          const double go = static_cast<double>(gy[i * n + p]);
          for (int64_t j = 0; j < kk; ++j) {
            const double ex = std::exp(t[static_cast<size_t>(j)] - tmax);
            const double w = static_cast<double>(pv2[(i * kk + j) * n + p]) * ex / acc;
            gp[(i * kk + j) * n + p] += static_cast<T>(go * ex / acc);
            T* gmrow = gm.ptr() + ((i * kk + j) * n + p) * c;
            const T* mrow = av2.ptr() + ((i * kk + j) * n + p) * c;
            const T* xrow = xv.ptr() + (i * n + p) * c;
            for (int64_t ch = 0; ch < c; ++ch) {
              const double d = static_cast<double>(xrow[ch]) - static_cast<double>(mrow[ch]);
              gmrow[ch] += static_cast<T>(go * w * d * 2.0 * inv2s2);
            }
          }
        }
      }
    });
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Graph&)> bwd;
  };

  static void im2col(const T* x, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw,
                     int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* cols) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        T* crow = cols + (oy * wo + ox) * ci * kh * kw;
        for (int64_t ic = 0; ic < ci; ++ic) {
          for (int64_t ky = 0; ky < kh; ++ky) {
            const int64_t iy = oy * stride - pad + ky;
            for (int64_t kx = 0; kx < kw; ++kx) {
              const int64_t ix = ox * stride - pad + kx;
              crow[(ic * kh + ky) * kw + kx] =
                  (iy < 0 || iy >= h || ix < 0 || ix >= w) ? T(0) : x[(ic * h + iy) * w + ix];
            }
          }
        }
      }
    }
  }

  static void col2im_add(const T* cols, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw,
                         int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* x) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        const T* crow = cols + (oy * wo + ox) * ci * kh * kw;
        for (int64_t ic = 0; ic < ci; ++ic) {
          for (int64_t ky = 0; ky < kh; ++ky) {
            const int64_t iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              continue;
            }
            for (int64_t kx = 0; kx < kw; ++kx) {
              const int64_t ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) {
                continue;
              }
              x[(ic * h + iy) * w + ix] += crow[(ic * kh + ky) * kw + kx];
            }
          }
        }
      }
    }
  }

  Id push(Tensor<T> v, bool needs_grad, std::function<void(Graph&)> bwd) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, needs_grad, std::move(bwd)});
    return static_cast<Id>(nodes_.size() - 1);
  }

  template <typename F>
  Id make(Tensor<T> out, const std::vector<Id>& parents, F bwd_fn) {
    bool ng = false;
    for (Id p : parents) {
      ng = ng || nodes_[static_cast<size_t>(p)].needs_grad;
    }
    if (!grad_enabled_) {
      ng = false;
    }
    Id id = push(std::move(out), ng, nullptr);
    if (ng) {
      nodes_[static_cast<size_t>(id)].bwd = [id, fn = std::move(bwd_fn)](Graph& g) { fn(g, id); };
    }
    return id;
  }

  Tensor<T>& gref(Id id) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    if (nd.grad.size() == 0) {
      nd.grad = Tensor<T>(nd.val.shape);
    }
    return nd.grad;
  }

  void acc(Id id, const Tensor<T>& g) {
    Tensor<T>& dst = gref(id);
    detail::v_axpy(T(1), g.ptr(), dst.ptr(), dst.size());
  }

  void check_same(Id a, Id b) const {
    if (!val(a).same_shape(val(b))) {
      throw std::invalid_argument("shape mismatch: " + val(a).shape_str() + " vs " + val(b).shape_str());
    }
  }

  void check_count(Id a, int64_t n) const {
    if (val(a).size() != n) {
      throw std::invalid_argument("element count mismatch");
    }
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::pair<Id, Tensor<T>*>> sinks_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace ocloc
