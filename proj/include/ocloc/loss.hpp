#pragma once

#include <cmath>

#include "ocloc/decoder.hpp"
#include "ocloc/encoder.hpp"
#include "ocloc/model.hpp"

namespace ocloc {

// KL(N(mu, diag sigma^2) || N(0, I)) summed over all elements.
template <typename T>
Id kl_normal_std(Graph<T>& g, Id mu, Id sigma) {
  Id s2 = g.square(sigma);
  Id term = g.sub(g.add(g.square(mu), s2), g.log_(s2));
  term = g.add_scalar(term, T(-1));
  return g.mul_scalar(g.sum_all(term), T(0.5));
}

// KL(Beta(tau1, tau2) || Beta(a, 1)) summed. ln B(a, 1) = -ln a.
template <typename T>
Id kl_beta(Graph<T>& g, Id tau1, Id tau2, double a) {
  Id ts = g.add(tau1, tau2);
  Id lg = g.sub(g.sub(g.lgamma_(ts), g.lgamma_(tau1)), g.lgamma_(tau2));
  Id term = g.add(lg, g.mul(g.add_scalar(tau1, static_cast<T>(-a)), g.digamma_(tau1)));
  term = g.add(term, g.mul(g.add_scalar(tau2, T(-1)), g.digamma_(tau2)));
  term = g.sub(term, g.mul(g.add_scalar(ts, static_cast<T>(-a - 1.0)), g.digamma_(ts)));
  term = g.add_scalar(term, static_cast<T>(-std::log(a)));
  return g.sum_all(term);
}

// E_{rho ~ Beta(tau1, tau2)} KL(Bern(kappa) || Bern(rho)) summed; the
// expectation of log rho is digamma(tau1) - digamma(tau1 + tau2).
template <typename T>
Id kl_bernoulli_expected(Graph<T>& g, Id kappa, Id tau1, Id tau2) {
  Id ts = g.digamma_(g.add(tau1, tau2));
  Id one_m = g.add_scalar(g.neg(kappa), T(1));
  Id term = g.add(ts, g.mul(kappa, g.sub(g.log_(kappa), g.digamma_(tau1))));
  term = g.add(term, g.mul(one_m, g.sub(g.log_(one_m), g.digamma_(tau2))));
  return g.sum_all(term);
}

template <typename T>
struct LatentSample {
  Id z_view;      // [S, E_view]
  Id z_obj;       // [B*K, E_obj]
  Id z_bck;       // [B, E_bck]
  Id z_prs;       // [B, K], relaxed in (0,1) while training, hard {0,1} at eval
  Tensor<T> rho;  // [B, K] posterior draw; carried for diagnostics only
  bool hard = false;
};

// Reparameterized draws from the approximate posterior. Presence uses a
// temperature-sharpened logistic relaxation; rho has no sampled gradient
// path because every rho term of the objective is closed-form.
template <typename T>
LatentSample<T> sample_latents(Bound<T>& b, const InferOut& q, NoiseSource<T>& noise,
                               double temperature, bool hard) {
  auto& g = b.g;
  LatentSample<T> out;
  auto reparam = [&](Id mu, Id sigma) {
    Id eps = g.constant(noise.normal(g.val(mu).shape));
    return g.add(mu, g.mul(sigma, eps));
  };
  out.z_view = reparam(q.mu_view, q.sigma_view);
  out.z_obj = reparam(q.mu_obj, q.sigma_obj);
  out.z_bck = reparam(q.mu_bck, q.sigma_bck);
  out.rho = noise.beta(g.val(q.tau1), g.val(q.tau2));
  out.hard = hard;
  if (hard) {
    const Tensor<T>& kv = g.val(q.kappa);
    Tensor<T> z(kv.shape);
    for (int64_t i = 0; i < z.size(); ++i) {
      z[i] = kv[i] > T(0.5) ? T(1) : T(0);
    }
    out.z_prs = g.constant(std::move(z));
  } else {
    Id logit = g.sub(g.log_(q.kappa), g.log_(g.add_scalar(g.neg(q.kappa), T(1))));
    Id l = g.constant(noise.logistic(g.val(q.kappa).shape));
    out.z_prs = g.sigmoid(g.mul_scalar(g.add(logit, l), static_cast<T>(1.0 / temperature)));
  }
  return out;
}

// Negative ELBO, summed over the batch. Every field is a sum; total is
// exactly the sum of the six parts.
struct LossBreakdown {
  double nll = 0, kl_view = 0, kl_bck = 0, kl_obj = 0, kl_rho = 0, kl_prs = 0, total = 0;
  Id total_node = -1;
  Id nll_node = -1;
};

template <typename T>
LossBreakdown total_loss(Bound<T>& b, const ModelConfig& cfg, int64_t B, int64_t M,
                         const Tensor<T>& target, const InferOut& q, const LatentSample<T>& z,
                         DecodeOut* dec_out = nullptr) {
  auto& g = b.g;
  DecodeOut dec = decode(b, cfg, B, M, z.z_view, z.z_obj, z.z_bck, z.z_prs);
  Id mu = g.reshape(dec.a_full, {B * M, cfg.K + 1, cfg.pixels(), cfg.channels});
  Id ll = g.mixture_loglik(dec.pi_full, mu, target, static_cast<T>(cfg.sigma_x));
  Id nll = g.neg(g.sum_all(ll));
  Id kv = kl_normal_std(g, q.mu_view, q.sigma_view);
  Id kb = kl_normal_std(g, q.mu_bck, q.sigma_bck);
  Id ko = kl_normal_std(g, q.mu_obj, q.sigma_obj);
  Id kr = kl_beta(g, q.tau1, q.tau2, cfg.alpha / static_cast<double>(cfg.K));
  Id kp = kl_bernoulli_expected(g, q.kappa, q.tau1, q.tau2);
  Id total = g.add_n({nll, kv, kb, ko, kr, kp});

  LossBreakdown out;
  out.nll = static_cast<double>(g.val(nll)[0]);
  out.kl_view = static_cast<double>(g.val(kv)[0]);
  out.kl_bck = static_cast<double>(g.val(kb)[0]);
  out.kl_obj = static_cast<double>(g.val(ko)[0]);
  out.kl_rho = static_cast<double>(g.val(kr)[0]);
  out.kl_prs = static_cast<double>(g.val(kp)[0]);
  out.total = static_cast<double>(g.val(total)[0]);
  out.total_node = total;
  out.nll_node = nll;
  if (dec_out != nullptr) {
    *dec_out = dec;
  }
  return out;
}

// Ancestral draw from the generative model, M views of one scene.
template <typename T>
struct SceneSample {
  Tensor<T> mean;      // [M, N, C] expected image
  Tensor<T> sampled;   // [M, N, C] component + pixel noise draw
  Tensor<T> pi_full;   // [M, K+1, N]
  Tensor<T> s_obj;     // [M, K, N]
  Tensor<T> s_sdw;     // [M, K, N]
  Tensor<T> order;     // [M, K]
  Tensor<T> presence;  // [K]
};

template <typename T>
SceneSample<T> sample_scene(ParamStore<T>& params, const ModelConfig& cfg, int64_t M, Rng& rng) {
  Graph<T> g(false);
  Bound<T> b{g, params};
  const int64_t K = cfg.K;
  const int64_t N = cfg.pixels();
  const int64_t C = cfg.channels;

  auto gauss = [&](std::vector<int64_t> shape) {
    Tensor<T> t(shape);
    for (int64_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<T>(rng.normal());
    }
    return t;
  };
  Tensor<T> prs({1, K});
  for (int64_t k = 0; k < K; ++k) {
    const double rho = rng.beta(cfg.alpha / static_cast<double>(cfg.K), 1.0);
    prs[k] = rng.bernoulli(rho) ? T(1) : T(0);
  }

  Id z_view = g.constant(gauss({M, cfg.E_view}));
  Id z_obj = g.constant(gauss({K, cfg.E_obj}));
  Id z_bck = g.constant(gauss({1, cfg.E_bck}));
  Id z_prs = g.constant(prs);
  DecodeOut dec = decode(b, cfg, 1, M, z_view, z_obj, z_bck, z_prs);

  SceneSample<T> out;
  out.pi_full = g.val(dec.pi_full);
  out.s_obj = g.val(dec.s_obj);
  out.s_sdw = g.val(dec.s_sdw);
  out.order = g.val(dec.order);
  out.presence = g.val(z_prs).reshaped({K});

  const Tensor<T>& a_full = g.val(dec.a_full);  // [M*(K+1), N*C]
  out.mean = Tensor<T>({M, N, C});
  out.sampled = Tensor<T>({M, N, C});
  for (int64_t m = 0; m < M; ++m) {
    for (int64_t n = 0; n < N; ++n) {
      double pick = rng.uniform();
      int64_t chosen = 0;
      double cum = 0.0;
      for (int64_t k = 0; k <= K; ++k) {
        cum += static_cast<double>(out.pi_full[(m * (K + 1) + k) * N + n]);
        if (pick < cum) {
          chosen = k;
          break;
        }
        chosen = k;
      }
      for (int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t k = 0; k <= K; ++k) {
          acc += static_cast<double>(out.pi_full[(m * (K + 1) + k) * N + n]) *
                 static_cast<double>(a_full[(m * (K + 1) + k) * N * C + n * C + c]);
        }
        out.mean[(m * N + n) * C + c] = static_cast<T>(acc);
        out.sampled[(m * N + n) * C + c] =
            static_cast<T>(a_full[(m * (K + 1) + chosen) * N * C + n * C + c] +
                           static_cast<T>(cfg.sigma_x * rng.normal()));
      }
    }
  }
  return out;
}

}  // namespace ocloc
