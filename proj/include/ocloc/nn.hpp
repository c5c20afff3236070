#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "ocloc/graph.hpp"
#include "ocloc/rng.hpp"
#include "ocloc/tensor.hpp"

namespace ocloc {

// Named parameter set. Registration order is fixed by construction and is
// the serialization order, so checkpoints replay bit-exactly.
template <typename T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;
  std::vector<Tensor<T>> grads;
  std::unordered_map<std::string, size_t> index;

  Tensor<T>& add(const std::string& name, std::vector<int64_t> shape) {
    if (index.count(name) != 0) {
      throw std::invalid_argument("duplicate parameter: " + name);
    }
    index[name] = names.size();
    names.push_back(name);
    values.emplace_back(shape);
    grads.emplace_back(std::move(shape));
    return values.back();
  }

  bool has(const std::string& name) const { return index.count(name) != 0; }

  size_t at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) {
      throw std::invalid_argument("unknown parameter: " + name);
    }
    return it->second;
  }

  Tensor<T>& value(const std::string& name) { return values[at(name)]; }
  const Tensor<T>& value(const std::string& name) const { return values[at(name)]; }
  Tensor<T>& grad(const std::string& name) { return grads[at(name)]; }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& v : values) {
      n += v.size();
    }
    return n;
  }

  void zero_grads() {
    for (auto& g : grads) {
      g.fill(T(0));
    }
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (size_t i = 0; i < names.size(); ++i) {
      out.add(names[i], values[i].shape) = values[i].template cast<U>();
    }
    return out;
  }
};

// Binds store entries into a graph as parameter leaves, one node per name
// per graph, so repeated layer applications share the leaf.
template <typename T>
struct Bound {
  Graph<T>& g;
  ParamStore<T>& store;
  std::unordered_map<std::string, typename Graph<T>::Id> cache;

  typename Graph<T>::Id operator()(const std::string& name) {
    auto it = cache.find(name);
    if (it != cache.end()) {
      return it->second;
    }
    const size_t i = store.at(name);
    auto id = g.param(store.values[i], &store.grads[i]);
    cache[name] = id;
    return id;
  }
};

namespace nn {

template <typename T>
void glorot(Tensor<T>& w, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int64_t i = 0; i < w.size(); ++i) {
    w[i] = static_cast<T>(rng.uniform(-limit, limit));
  }
}

template <typename T>
void reg_linear(ParamStore<T>& s, const std::string& p, int64_t in, int64_t out, Rng& rng,
                bool bias = true) {
  glorot(s.add(p + ".w", {in, out}), in, out, rng);
  if (bias) {
    s.add(p + ".b", {out});
  }
}

template <typename T>
void reg_ln(ParamStore<T>& s, const std::string& p, int64_t dim) {
  s.add(p + ".g", {dim}).fill(T(1));
  s.add(p + ".b", {dim});
}

template <typename T>
void reg_gru(ParamStore<T>& s, const std::string& p, int64_t in, int64_t hidden, Rng& rng) {
  glorot(s.add(p + ".wx", {in, 3 * hidden}), in, 3 * hidden, rng);
  glorot(s.add(p + ".wh", {hidden, 3 * hidden}), hidden, 3 * hidden, rng);
  s.add(p + ".bx", {3 * hidden});
  s.add(p + ".bh", {3 * hidden});
}

template <typename T>
void reg_transformer(ParamStore<T>& s, const std::string& p, int64_t dim, int64_t hidden,
                     Rng& rng) {
  reg_ln(s, p + ".ln1", dim);
  reg_linear(s, p + ".qkv", dim, 3 * dim, rng);
  reg_linear(s, p + ".proj", dim, dim, rng);
  reg_ln(s, p + ".ln2", dim);
  reg_linear(s, p + ".ff1", dim, hidden, rng);
  reg_linear(s, p + ".ff2", hidden, dim, rng);
}

template <typename T>
void reg_conv(ParamStore<T>& s, const std::string& p, int64_t ci, int64_t co, int64_t kh,
              int64_t kw, Rng& rng) {
  glorot(s.add(p + ".w", {co, ci, kh, kw}), ci * kh * kw, co * kh * kw, rng);
  s.add(p + ".b", {co});
}

template <typename T>
void reg_convt(ParamStore<T>& s, const std::string& p, int64_t ci, int64_t co, int64_t kh,
               int64_t kw, Rng& rng) {
  glorot(s.add(p + ".w", {ci, co, kh, kw}), ci * kh * kw, co * kh * kw, rng);
  s.add(p + ".b", {co});
}

template <typename T>
typename Graph<T>::Id linear(Bound<T>& b, const std::string& p, typename Graph<T>::Id x) {
  return b.g.add_bias(b.g.matmul(x, b(p + ".w")), b(p + ".b"));
}

template <typename T>
typename Graph<T>::Id linear_nobias(Bound<T>& b, const std::string& p,
                                    typename Graph<T>::Id x) {
  return b.g.matmul(x, b(p + ".w"));
}

template <typename T>
typename Graph<T>::Id layer_norm(Bound<T>& b, const std::string& p, typename Graph<T>::Id x) {
  return b.g.layernorm(x, b(p + ".g"), b(p + ".b"));
}

template <typename T>
typename Graph<T>::Id gru_cell(Bound<T>& b, const std::string& p, typename Graph<T>::Id x,
                               typename Graph<T>::Id h) {
  Graph<T>& g = b.g;
  const int64_t hidden = g.val(h).shape.back();
  auto gx = g.add_bias(g.matmul(x, b(p + ".wx")), b(p + ".bx"));
  auto gh = g.add_bias(g.matmul(h, b(p + ".wh")), b(p + ".bh"));
  auto r = g.sigmoid(g.add(g.slice_lastdim(gx, 0, hidden), g.slice_lastdim(gh, 0, hidden)));
  auto z = g.sigmoid(g.add(g.slice_lastdim(gx, hidden, hidden), g.slice_lastdim(gh, hidden, hidden)));
  auto n = g.tanh_(g.add(g.slice_lastdim(gx, 2 * hidden, hidden),
                         g.mul(r, g.slice_lastdim(gh, 2 * hidden, hidden))));
  // h' = n + z*(h - n)
  return g.add(n, g.mul(z, g.sub(h, n)));
}

template <typename T>
typename Graph<T>::Id conv2d(Bound<T>& b, const std::string& p, typename Graph<T>::Id x,
                             int64_t stride, int64_t pad) {
  return b.g.conv2d(x, b(p + ".w"), b(p + ".b"), stride, pad);
}

template <typename T>
typename Graph<T>::Id conv_transpose2d(Bound<T>& b, const std::string& p,
                                       typename Graph<T>::Id x, int64_t stride, int64_t pad) {
  return b.g.conv_transpose2d(x, b(p + ".w"), b(p + ".b"), stride, pad);
}

// Pre-LN transformer encoder block on [S, Tk, D] tokens; SiLU feed-forward.
template <typename T>
typename Graph<T>::Id transformer_block(Bound<T>& b, const std::string& p,
                                        typename Graph<T>::Id x, int64_t heads) {
  Graph<T>& g = b.g;
  const auto& shape = g.val(x).shape;
  const int64_t s = shape[0];
  const int64_t tk = shape[1];
  const int64_t d = shape[2];
  const int64_t dh = d / heads;

  auto xin = g.reshape(x, {s * tk, d});
  auto h1 = g.layernorm(xin, b(p + ".ln1.g"), b(p + ".ln1.b"));
  auto qkv = g.add_bias(g.matmul(h1, b(p + ".qkv.w")), b(p + ".qkv.b"));
  auto q = g.split_heads(g.reshape(g.slice_lastdim(qkv, 0, d), {s, tk, d}), heads);
  auto k = g.split_heads(g.reshape(g.slice_lastdim(qkv, d, d), {s, tk, d}), heads);
  auto v = g.split_heads(g.reshape(g.slice_lastdim(qkv, 2 * d, d), {s, tk, d}), heads);
  auto logits = g.mul_scalar(g.bmm_nt(q, k), T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh))));
  auto attn = g.softmax_lastdim(logits);
  auto ctx = g.merge_heads(g.bmm(attn, v), heads);
  auto proj = g.add_bias(g.matmul(g.reshape(ctx, {s * tk, d}), b(p + ".proj.w")), b(p + ".proj.b"));
  auto res1 = g.add(xin, proj);

  auto h2 = g.layernorm(res1, b(p + ".ln2.g"), b(p + ".ln2.b"));
  auto ff = g.add_bias(g.matmul(g.silu(g.add_bias(g.matmul(h2, b(p + ".ff1.w")), b(p + ".ff1.b"))),
                                b(p + ".ff2.w")),
                       b(p + ".ff2.b"));
  return g.reshape(g.add(res1, ff), {s, tk, d});
}

// Normalized pixel/grid coordinates in [-1, 1], row-major over (y, x).
template <typename T>
Tensor<T> coord_grid(int64_t h, int64_t w) {
  Tensor<T> out({h * w, 2});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      out[(y * w + x) * 2 + 0] = h > 1 ? static_cast<T>(2.0 * y / (h - 1) - 1.0) : T(0);
      out[(y * w + x) * 2 + 1] = w > 1 ? static_cast<T>(2.0 * x / (w - 1) - 1.0) : T(0);
    }
  }
  return out;
}

}  // namespace nn
}  // namespace ocloc
