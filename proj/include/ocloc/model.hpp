#pragma once

#include <memory>
#include <vector>

#include "ocloc/config.hpp"
#include "ocloc/nn.hpp"
#include "ocloc/rng.hpp"

namespace ocloc {

// Numeric guards. These are part of the trained artifact's semantics, so
// they are fixed constants rather than config.
namespace guard {
inline constexpr double kSigmaFloor = 1e-4;   // posterior std floor
inline constexpr double kTauFloor = 1e-2;     // Beta parameter floor
inline constexpr double kKappaClamp = 1e-4;   // presence probability clamp
inline constexpr double kLogitClamp = 16.0;   // silhouette logit clamp
inline constexpr double kLogFloor = 1e-12;    // attention log floor
}  // namespace guard

// Noise injection point: training draws live from an Rng; gradient checks
// record one draw and replay it so every finite-difference evaluation sees
// identical noise.
template <typename T>
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Tensor<T> normal(const std::vector<int64_t>& shape) = 0;
  virtual Tensor<T> logistic(const std::vector<int64_t>& shape) = 0;
  virtual Tensor<T> beta(const Tensor<T>& a, const Tensor<T>& b) = 0;
};

template <typename T>
class RngNoise : public NoiseSource<T> {
 public:
  explicit RngNoise(Rng& rng) : rng_(rng) {}

  Tensor<T> normal(const std::vector<int64_t>& shape) override {
    Tensor<T> out(shape);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(rng_.normal());
    }
    return out;
  }

  Tensor<T> logistic(const std::vector<int64_t>& shape) override {
    Tensor<T> out(shape);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(rng_.logistic());
    }
    return out;
  }

  Tensor<T> beta(const Tensor<T>& a, const Tensor<T>& b) override {
    Tensor<T> out(a.shape);
    for (int64_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(rng_.beta(static_cast<double>(a[i]), static_cast<double>(b[i])));
    }
    return out;
  }

 private:
  Rng& rng_;
};

// Records every tensor handed out; replay() rewinds so later evaluations
// consume the identical sequence.
template <typename T>
class ReplayNoise : public NoiseSource<T> {
 public:
  explicit ReplayNoise(NoiseSource<T>* inner) : inner_(inner) {}

  void replay() { cursor_ = 0; }

  Tensor<T> normal(const std::vector<int64_t>& shape) override { return next(shape, 0, nullptr, nullptr); }
  Tensor<T> logistic(const std::vector<int64_t>& shape) override { return next(shape, 1, nullptr, nullptr); }
  Tensor<T> beta(const Tensor<T>& a, const Tensor<T>& b) override { return next(a.shape, 2, &a, &b); }

  template <typename U>
  ReplayNoise<U> cast() const {
    ReplayNoise<U> out(nullptr);
    for (const auto& t : record_) {
      out.record_.push_back(t.template cast<U>());
    }
    return out;
  }

  std::vector<Tensor<T>> record_;

 private:
  template <typename>
  friend class ReplayNoise;

  Tensor<T> next(const std::vector<int64_t>& shape, int kind, const Tensor<T>* a, const Tensor<T>* b) {
    if (cursor_ < record_.size()) {
      return record_[cursor_++];
    }
    if (inner_ == nullptr) {
      throw std::logic_error("replay noise exhausted");
    }
    Tensor<T> t = kind == 0   ? inner_->normal(shape)
                  : kind == 1 ? inner_->logistic(shape)
                              : inner_->beta(*a, *b);
    record_.push_back(t);
    ++cursor_;
    return t;
  }

  NoiseSource<T>* inner_;
  size_t cursor_ = 0;
};

// Gather indices pairing row (b, a) of one [B*A, .] tensor with row (b, c)
// of a [B*C, .] tensor into [B*A*C, .] rows ordered (b, a, c).
inline std::vector<int64_t> pair_rows_left(int64_t b, int64_t a, int64_t c) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(b * a * c));
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < a; ++j) {
      for (int64_t k = 0; k < c; ++k) {
        idx.push_back(i * a + j);
      }
    }
  }
  return idx;
}

inline std::vector<int64_t> pair_rows_right(int64_t b, int64_t a, int64_t c) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(b * a * c));
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < a; ++j) {
      for (int64_t k = 0; k < c; ++k) {
        idx.push_back(i * c + k);
      }
    }
  }
  return idx;
}

// Full parameter inventory. Registration order defines checkpoint layout.
template <typename T>
ParamStore<T> make_model_params(const ModelConfig& cfg, uint64_t seed) {
  ParamStore<T> s;
  Rng rng(seed);
  using nn::reg_conv;
  using nn::reg_convt;
  using nn::reg_gru;
  using nn::reg_linear;
  using nn::reg_ln;
  using nn::reg_transformer;

  // feature extractor
  reg_conv(s, "enc.conv0", cfg.channels, cfg.D_ft, 4, 4, rng);
  for (int i = 1; i <= 4; ++i) {
    reg_conv(s, "enc.conv" + std::to_string(i), cfg.D_ft, cfg.D_ft, 5, 5, rng);
  }
  reg_linear(s, "enc.pos", 2, cfg.D_ft, rng);
  reg_ln(s, "enc.head.ln", cfg.D_ft);
  reg_linear(s, "enc.head.fc1", cfg.D_ft, cfg.D_ft, rng);
  reg_linear(s, "enc.head.fc2", cfg.D_ft, cfg.D_ft, rng);

  // attention maps
  reg_ln(s, "enc.key.ln", cfg.D_ft);
  reg_linear(s, "enc.key.fc", cfg.D_ft, cfg.D_key, rng, false);
  reg_ln(s, "enc.val.ln", cfg.D_ft);
  reg_linear(s, "enc.val.fc", cfg.D_ft, cfg.D_val, rng, false);
  reg_ln(s, "enc.qry.ln", cfg.D_val);
  reg_linear(s, "enc.qry.fc", cfg.D_val, cfg.D_key, rng, false);

  // state update
  reg_gru(s, "enc.gru", cfg.D_val, cfg.D_val, rng);
  reg_ln(s, "enc.upd.ln", cfg.D_val);
  reg_linear(s, "enc.upd.fc1", cfg.D_val, cfg.upd_hidden, rng);
  reg_linear(s, "enc.upd.fc2", cfg.upd_hidden, cfg.D_val, rng);

  // state init distributions (softplus(raw) + floor gives sigma)
  const T raw_unit = static_cast<T>(0.5413248546129181);  // softplus(x) = 1
  s.add("enc.init.mu_view", {cfg.D_vw});
  s.add("enc.init.rawsig_view", {cfg.D_vw}).fill(raw_unit);
  s.add("enc.init.mu_attr", {cfg.D_at});
  s.add("enc.init.rawsig_attr", {cfg.D_at}).fill(raw_unit);

  // readouts
  reg_linear(s, "enc.view.fc1", cfg.D_vw, cfg.head_hidden, rng);
  reg_linear(s, "enc.view.fc2", cfg.head_hidden, cfg.head_hidden, rng);
  reg_linear(s, "enc.view.fc3", cfg.head_hidden, 2 * cfg.E_view, rng);
  reg_linear(s, "enc.obj.fc1", cfg.D_at, cfg.head_hidden, rng);
  reg_linear(s, "enc.obj.fc2", cfg.head_hidden, cfg.head_hidden, rng);
  reg_linear(s, "enc.obj.fc3", cfg.head_hidden, 2 * cfg.E_obj + 3, rng);
  reg_linear(s, "enc.bck.slot.fc1", cfg.D_at, cfg.head_hidden, rng);
  reg_linear(s, "enc.bck.slot.fc2", cfg.head_hidden, cfg.head_hidden + 1, rng);
  reg_linear(s, "enc.bck.out.fc1", cfg.head_hidden, cfg.head_hidden, rng);
  reg_linear(s, "enc.bck.out.fc2", cfg.head_hidden, cfg.head_hidden, rng);
  reg_linear(s, "enc.bck.out.fc3", cfg.head_hidden, 2 * cfg.E_bck, rng);

  // object decoder branch
  const int64_t to = cfg.dec_tok_obj;
  reg_linear(s, "dec.obj.fc1", cfg.E_view + cfg.E_obj, cfg.dec_fc_obj, rng);
  reg_linear(s, "dec.obj.fc2", cfg.dec_fc_obj, cfg.dec_fc_obj, rng);
  reg_linear(s, "dec.obj.fc3", cfg.dec_fc_obj, to, rng);
  reg_linear(s, "dec.obj.pos", 2, to, rng);
  reg_transformer(s, "dec.obj.tf0", to, 2 * to, rng);
  reg_transformer(s, "dec.obj.tf1", to, 2 * to, rng);
  reg_convt(s, "dec.obj.ct0", to, to, 4, 4, rng);
  reg_convt(s, "dec.obj.ct1", to, to / 2, 3, 3, rng);
  reg_convt(s, "dec.obj.ct2", to / 2, to / 2, 4, 4, rng);
  reg_convt(s, "dec.obj.ct3", to / 2, to / 4, 3, 3, rng);
  reg_convt(s, "dec.obj.ct4", to / 4, to / 4, 4, 4, rng);
  reg_convt(s, "dec.obj.ct5", to / 4, cfg.channels + 3, 3, 3, rng);

  // depth order
  reg_linear(s, "dec.ord.fc1", cfg.E_view + cfg.E_obj, cfg.ord_hidden, rng);
  reg_linear(s, "dec.ord.fc2", cfg.ord_hidden, cfg.ord_hidden, rng);
  reg_linear(s, "dec.ord.fc3", cfg.ord_hidden, 1, rng);

  // background decoder branch
  const int64_t tb = cfg.dec_tok_bck;
  reg_linear(s, "dec.bck.fc1", cfg.E_view + cfg.E_bck, cfg.dec_fc_bck, rng);
  reg_linear(s, "dec.bck.fc2", cfg.dec_fc_bck, cfg.dec_fc_bck, rng);
  reg_linear(s, "dec.bck.fc3", cfg.dec_fc_bck, tb, rng);
  reg_linear(s, "dec.bck.pos", 2, tb, rng);
  reg_transformer(s, "dec.bck.tf0", tb, 2 * tb, rng);
  reg_transformer(s, "dec.bck.tf1", tb, 2 * tb, rng);
  reg_convt(s, "dec.bck.ct0", tb, tb, 4, 4, rng);
  reg_convt(s, "dec.bck.ct1", tb, tb / 2, 3, 3, rng);
  reg_convt(s, "dec.bck.ct2", tb / 2, tb / 2, 4, 4, rng);
  reg_convt(s, "dec.bck.ct3", tb / 2, tb / 4, 3, 3, rng);
  reg_convt(s, "dec.bck.ct4", tb / 4, tb / 4, 4, 4, rng);
  reg_convt(s, "dec.bck.ct5", tb / 4, cfg.channels, 3, 3, rng);

  return s;
}

}  // namespace ocloc
