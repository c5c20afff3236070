// Release acceptance gate. One subcommand per criterion; each prints a
// single PASS/FAIL line with its measured numbers and exits 0 iff the
// criterion holds. The three model-quality criteria share one trained
// fixture produced by the train-fixture subcommand (a ctest fixture).
//
// Tolerances are pinned here, not in the build system:
//   kl-oracles               1e-2 relative, 1e6 Monte Carlo samples
//   decoder-invariants       1e-5 weight normalization, exact nullity,
//                            bitwise forward products, 1e-4 surrogate FD
//   gradient-check           1e-3 relative on >= 95% of parameters
//   metrics-oracles          1e-10 vs brute force, hand cases exact
//   desk-learning            ARI-O >= 0.6, ARI-A >= 0.4, OCA > baseline
//   object-constancy         same per-view matching on >= 80% of scenes
//   viewpoint-interpolation  1e-5 weight normalization, bitwise re-decode

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "metrics_reference.hpp"
#include "ocloc/checkpoint.hpp"
#include "ocloc/config.hpp"
#include "ocloc/decoder.hpp"
#include "ocloc/encoder.hpp"
#include "ocloc/graph.hpp"
#include "ocloc/loss.hpp"
#include "ocloc/metrics.hpp"
#include "ocloc/model.hpp"
#include "ocloc/rng.hpp"
#include "ocloc/scene.hpp"
#include "ocloc/tensor.hpp"
#include "ocloc/trainer.hpp"
#include "ocloc/viz.hpp"

namespace {

using namespace ocloc;
namespace fs = std::filesystem;
using nlohmann::json;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double secs() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

std::string strf(const char* f, ...) {
  char buf[768];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

int report(bool pass, const std::string& name, const std::string& detail, double secs) {
  std::printf("%s %s: %s (%.1fs)\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str(), secs);
  std::fflush(stdout);
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// kl-oracles: the three closed-form divergence terms against plain Monte
// Carlo averages of log q - log p. Parameter draws are rejected when the
// predicted Monte Carlo standard error cannot resolve the relative
// tolerance at the sample budget; the tolerance presumes a resolvable
// target, and the closed-form variance of each estimator is known.

double closed_kl_normal(double mu, double sigma) {
  Graph<double> g(false);
  Tensor<double> m({1});
  m[0] = mu;
  Tensor<double> s({1});
  s[0] = sigma;
  return g.val(kl_normal_std(g, g.constant(std::move(m)), g.constant(std::move(s))))[0];
}

double closed_kl_beta(double t1, double t2, double a) {
  Graph<double> g(false);
  Tensor<double> a1({1});
  a1[0] = t1;
  Tensor<double> a2({1});
  a2[0] = t2;
  return g.val(kl_beta(g, g.constant(std::move(a1)), g.constant(std::move(a2)), a))[0];
}

double closed_kl_bern(double kappa, double t1, double t2) {
  Graph<double> g(false);
  Tensor<double> k({1});
  k[0] = kappa;
  Tensor<double> a1({1});
  a1[0] = t1;
  Tensor<double> a2({1});
  a2[0] = t2;
  return g.val(kl_bernoulli_expected(g, g.constant(std::move(k)), g.constant(std::move(a1)),
                                     g.constant(std::move(a2))))[0];
}

int run_kl_oracles() {
  Timer timer;
  const int kDraws = 100;
  const int64_t kSamples = 1000000;
  const double kTol = 1e-2;
  Rng draw_rng(20260819);

  // exact >= floor keeps the relative tolerance meaningful; 5 standard
  // errors inside the tolerance makes a false FAIL a ~1e-6 event per draw.
  auto resolvable = [&](double exact, double var) {
    return exact >= 0.05 && 5.0 * std::sqrt(var / static_cast<double>(kSamples)) <= kTol * exact;
  };

  double max_rel[3] = {0, 0, 0};
  int bad = 0;

  // KL(N(mu, sigma^2) || N(0,1)); Var under q of the log ratio.
  for (int d = 0; d < kDraws; ++d) {
    double mu = 0, sigma = 1, exact = 0;
    for (int tries = 0;; ++tries) {
      if (tries > 1000) {
        throw std::runtime_error("normal draw rejection stuck");
      }
      mu = (draw_rng.bernoulli(0.5) ? 1.0 : -1.0) * draw_rng.uniform(1.0, 2.5);
      sigma = draw_rng.uniform(0.6, 1.4);
      exact = closed_kl_normal(mu, sigma);
      const double s2 = sigma * sigma;
      const double var = mu * mu * s2 + 0.5 * (s2 - 1.0) * (s2 - 1.0);
      if (resolvable(exact, var)) {
        break;
      }
    }
    Rng mc = Rng::stream(71001, static_cast<uint64_t>(d));
    double acc = 0.0;
    for (int64_t i = 0; i < kSamples; ++i) {
      const double z = mc.normal();
      const double x = mu + sigma * z;
      acc += -std::log(sigma) - 0.5 * z * z + 0.5 * x * x;
    }
    const double rel = std::fabs(acc / kSamples - exact) / exact;
    max_rel[0] = std::max(max_rel[0], rel);
    bad += rel > kTol;
  }

  // KL(Beta(t1, t2) || Beta(a, 1)). Var uses Var(log rho), Var(log(1-rho))
  // and their covariance, all trigamma expressions.
  for (int d = 0; d < kDraws; ++d) {
    double t1 = 2, t2 = 2, a = 1, exact = 0, c0 = 0;
    for (int tries = 0;; ++tries) {
      if (tries > 1000) {
        throw std::runtime_error("beta draw rejection stuck");
      }
      t1 = draw_rng.uniform(1.5, 6.0);
      t2 = draw_rng.uniform(1.5, 6.0);
      a = draw_rng.uniform(0.5, 3.0);
      exact = closed_kl_beta(t1, t2, a);
      const double w = detail::trigamma(t1 + t2);
      const double v1 = detail::trigamma(t1) - w;
      const double v2 = detail::trigamma(t2) - w;
      const double ca = t1 - a;
      const double cb = t2 - 1.0;
      const double var = ca * ca * v1 + cb * cb * v2 - 2.0 * ca * cb * w;
      if (resolvable(exact, var)) {
        c0 = std::lgamma(t1 + t2) - std::lgamma(t1) - std::lgamma(t2) - std::log(a);
        break;
      }
    }
    Rng mc = Rng::stream(71002, static_cast<uint64_t>(d));
    double acc = 0.0;
    for (int64_t i = 0; i < kSamples; ++i) {
      double rho = mc.beta(t1, t2);
      rho = std::min(std::max(rho, 1e-300), 1.0 - 1e-16);
      acc += c0 + (t1 - a) * std::log(rho) + (t2 - 1.0) * std::log1p(-rho);
    }
    const double rel = std::fabs(acc / kSamples - exact) / exact;
    max_rel[1] = std::max(max_rel[1], rel);
    bad += rel > kTol;
  }

  // E_{rho ~ Beta(t1, t2)} KL(Bern(kappa) || Bern(rho)).
  for (int d = 0; d < kDraws; ++d) {
    double kappa = 0.5, t1 = 2, t2 = 2, exact = 0;
    for (int tries = 0;; ++tries) {
      if (tries > 1000) {
        throw std::runtime_error("bernoulli draw rejection stuck");
      }
      kappa = draw_rng.uniform(0.15, 0.85);
      t1 = draw_rng.uniform(1.5, 6.0);
      t2 = draw_rng.uniform(1.5, 6.0);
      exact = closed_kl_bern(kappa, t1, t2);
      const double w = detail::trigamma(t1 + t2);
      const double v1 = detail::trigamma(t1) - w;
      const double v2 = detail::trigamma(t2) - w;
      const double om = 1.0 - kappa;
      const double var = kappa * kappa * v1 + om * om * v2 - 2.0 * kappa * om * w;
      if (resolvable(exact, var)) {
        break;
      }
    }
    Rng mc = Rng::stream(71003, static_cast<uint64_t>(d));
    const double om = 1.0 - kappa;
    const double ent = kappa * std::log(kappa) + om * std::log1p(-kappa);
    double acc = 0.0;
    for (int64_t i = 0; i < kSamples; ++i) {
      double rho = mc.beta(t1, t2);
      rho = std::min(std::max(rho, 1e-300), 1.0 - 1e-16);
      acc += ent - kappa * std::log(rho) - om * std::log1p(-rho);
    }
    const double rel = std::fabs(acc / kSamples - exact) / exact;
    max_rel[2] = std::max(max_rel[2], rel);
    bad += rel > kTol;
  }

  return report(bad == 0, "kl-oracles",
                strf("max rel err normal %.2e, beta %.2e, bernoulli %.2e over %d draws x 1e6 "
                     "samples, tol 1e-2",
                     max_rel[0], max_rel[1], max_rel[2], kDraws),
                timer.secs());
}

// ---------------------------------------------------------------------------
// decoder-invariants: mixture-weight partitions of unity, absent-slot
// nullity, front-slot winner-take-all, bitwise agreement of the
// straight-through forward with an independent exact product, and finite
// differences of the smooth surrogate at the operator level.

int run_decoder_invariants() {
  Timer timer;
  Rng rng(4242);
  const int kInstances = 50;
  const double kNormTol = 1e-5;

  double worst_norm = 0.0;
  double worst_fd = 0.0;
  std::string fail;

  for (int inst = 0; inst < kInstances && fail.empty(); ++inst) {
    ModelConfig cfg;
    cfg.image_height = 16;
    cfg.image_width = 16;
    cfg.channels = 3;
    cfg.K = 2 + rng.uniform_int(0, 2);
    cfg.T = 2;
    cfg.E_view = 2;
    cfg.E_obj = 4;
    cfg.E_bck = 3;
    cfg.D_ft = 8;
    cfg.D_vw = 4;
    cfg.D_at = 8;
    cfg.D_key = 8;
    cfg.D_val = 0;
    cfg.dec_tok_obj = 8;
    cfg.dec_tok_bck = 8;
    cfg.dec_fc_obj = 16;
    cfg.dec_fc_bck = 12;
    cfg.dec_heads_obj = 2;
    cfg.dec_heads_bck = 2;
    cfg.ord_hidden = 8;
    cfg.head_hidden = 8;
    cfg.upd_hidden = 8;
    cfg.finalize();
    cfg.validate();

    const int64_t B = 1 + rng.uniform_int(0, 1);
    const int64_t M = 1 + rng.uniform_int(0, 1);
    const int64_t S = B * M;
    const int64_t K = cfg.K;
    const int64_t N = cfg.pixels();

    ParamStore<float> params = make_model_params<float>(cfg, rng.next_u64());
    TensorF zv({S, cfg.E_view});
    for (int64_t i = 0; i < zv.size(); ++i) {
      zv[i] = static_cast<float>(rng.normal());
    }
    TensorF zo({B * K, cfg.E_obj});
    for (int64_t i = 0; i < zo.size(); ++i) {
      zo[i] = static_cast<float>(rng.normal());
    }
    TensorF zb({B, cfg.E_bck});
    for (int64_t i = 0; i < zb.size(); ++i) {
      zb[i] = static_cast<float>(rng.normal());
    }
    TensorF zp({B, K});
    for (int64_t i = 0; i < zp.size(); ++i) {
      zp[i] = rng.bernoulli(0.7) ? 1.0f : 0.0f;
    }

    Graph<float> g(false);
    Bound<float> b{g, params, {}};
    const DecodeOut dec =
        decode(b, cfg, B, M, g.constant(zv), g.constant(zo), g.constant(zb), g.constant(zp));
    const TensorF& pi = g.val(dec.pi);
    const TensorF& pi0 = g.val(dec.pi0);
    const TensorF& zeta = g.val(dec.zeta);
    const TensorF& zeta0 = g.val(dec.zeta0);
    const TensorF& sobj = g.val(dec.s_obj);
    const TensorF& ssdw = g.val(dec.s_sdw);
    const TensorF& ord = g.val(dec.order);

    // (a) per-pixel partitions of unity, hard presence
    for (int64_t s = 0; s < S; ++s) {
      for (int64_t p = 0; p < N; ++p) {
        double sum_pi = pi0[s * N + p];
        double sum_ze = zeta0[s * N + p];
        for (int64_t k = 0; k < K; ++k) {
          sum_pi += pi[(s * K + k) * N + p];
          sum_ze += zeta[(s * K + k) * N + p];
        }
        worst_norm = std::max({worst_norm, std::fabs(sum_pi - 1.0), std::fabs(sum_ze - 1.0)});
      }
    }
    if (worst_norm > kNormTol) {
      fail = strf("instance %d: weight sum off by %.2e", inst, worst_norm);
      break;
    }

    // (a') and with relaxed presence values
    {
      TensorF zr({B, K});
      for (int64_t i = 0; i < zr.size(); ++i) {
        zr[i] = static_cast<float>(rng.uniform(0.1, 0.9));
      }
      Graph<float> g2(false);
      Bound<float> b2{g2, params, {}};
      const DecodeOut d2 =
          decode(b2, cfg, B, M, g2.constant(zv), g2.constant(zo), g2.constant(zb), g2.constant(zr));
      const TensorF& rpi = g2.val(d2.pi);
      const TensorF& rpi0 = g2.val(d2.pi0);
      const TensorF& rze = g2.val(d2.zeta);
      const TensorF& rze0 = g2.val(d2.zeta0);
      for (int64_t s = 0; s < S; ++s) {
        for (int64_t p = 0; p < N; ++p) {
          double sum_pi = rpi0[s * N + p];
          double sum_ze = rze0[s * N + p];
          for (int64_t k = 0; k < K; ++k) {
            sum_pi += rpi[(s * K + k) * N + p];
            sum_ze += rze[(s * K + k) * N + p];
          }
          worst_norm = std::max({worst_norm, std::fabs(sum_pi - 1.0), std::fabs(sum_ze - 1.0)});
        }
      }
      if (worst_norm > kNormTol) {
        fail = strf("instance %d: relaxed weight sum off by %.2e", inst, worst_norm);
        break;
      }
    }

    // (b) absent slots contribute nothing, exactly
    for (int64_t s = 0; s < S && fail.empty(); ++s) {
      const int64_t bi = s / M;
      for (int64_t k = 0; k < K && fail.empty(); ++k) {
        if (zp[bi * K + k] != 0.0f) {
          continue;
        }
        for (int64_t p = 0; p < N; ++p) {
          const int64_t at = (s * K + k) * N + p;
          if (pi[at] != 0.0f || zeta[at] != 0.0f || sobj[at] != 0.0f || ssdw[at] != 0.0f) {
            fail = strf("instance %d: absent slot %lld leaks at pixel %lld", inst,
                        static_cast<long long>(k), static_cast<long long>(p));
            break;
          }
        }
      }
    }
    if (!fail.empty()) {
      break;
    }

    // (c) the frontmost present slot keeps its full silhouette, bitwise
    for (int64_t s = 0; s < S && fail.empty(); ++s) {
      const int64_t bi = s / M;
      int64_t front = -1;
      for (int64_t k = 0; k < K; ++k) {
        if (zp[bi * K + k] == 1.0f && (front < 0 || ord[s * K + k] > ord[s * K + front])) {
          front = k;
        }
      }
      if (front < 0) {
        continue;
      }
      const size_t row = sizeof(float) * static_cast<size_t>(N);
      if (std::memcmp(pi.ptr() + (s * K + front) * N, sobj.ptr() + (s * K + front) * N, row) != 0 ||
          std::memcmp(zeta.ptr() + (s * K + front) * N, ssdw.ptr() + (s * K + front) * N, row) != 0) {
        fail = strf("instance %d: front slot %lld is occluded", inst, static_cast<long long>(front));
      }
    }
    if (!fail.empty()) {
      break;
    }

    // (d) straight-through forward equals the exact occlusion product
    {
      auto exact_product = [&](const TensorF& sv, const TensorF& ov) {
        TensorF out({S, K, N});
        for (int64_t i = 0; i < S; ++i) {
          for (int64_t j = 0; j < K; ++j) {
            const float oj = ov[i * K + j];
            for (int64_t p = 0; p < N; ++p) {
              float prod = sv[(i * K + j) * N + p];
              for (int64_t j2 = 0; j2 < K; ++j2) {
                const float o2 = ov[i * K + j2];
                if (o2 > oj || (o2 == oj && j2 < j)) {
                  prod *= 1.0f - sv[(i * K + j2) * N + p];
                }
              }
              out[(i * K + j) * N + p] = prod;
            }
          }
        }
        return out;
      };
      const TensorF want_pi = exact_product(sobj, ord);
      const TensorF want_ze = exact_product(ssdw, ord);
      const size_t bytes = sizeof(float) * static_cast<size_t>(S * K * N);
      if (std::memcmp(want_pi.ptr(), pi.ptr(), bytes) != 0 ||
          std::memcmp(want_ze.ptr(), zeta.ptr(), bytes) != 0) {
        fail = strf("instance %d: forward differs from the exact product", inst);
        break;
      }
    }

    // (e) finite differences of the smooth surrogate, operator level
    {
      const int64_t S2 = 2, K2 = 3, N2 = 6;
      ParamStore<double> ps;
      Tensor<double>& sv = ps.add("s", {S2, K2, N2});
      for (int64_t i = 0; i < sv.size(); ++i) {
        sv[i] = rng.uniform(0.05, 0.95);
      }
      Tensor<double>& ov = ps.add("o", {S2, K2});
      for (int64_t i = 0; i < ov.size(); ++i) {
        ov[i] = rng.normal();
      }
      Tensor<double>& z0 = ps.add("z0", {S2, N2});
      for (int64_t i = 0; i < z0.size(); ++i) {
        z0[i] = rng.uniform(0.05, 0.95);
      }
      Tensor<double> w({S2, K2, N2});
      for (int64_t i = 0; i < w.size(); ++i) {
        w[i] = rng.normal();
      }

      auto eval = [&](bool grad) {
        Graph<double> gd(grad);
        gd.st_surrogate_forward = true;
        Bound<double> bd{gd, ps, {}};
        const Id y = gd.ordered_weights(bd("s"), bd("o"), bd("z0"));
        const Id loss = gd.sum_all(gd.mul(y, gd.constant(w)));
        if (grad) {
          ps.zero_grads();
          gd.backward(loss);
        }
        return gd.val(loss)[0];
      };
      eval(true);
      const std::vector<Tensor<double>> bp = ps.grads;
      for (size_t t = 0; t < ps.values.size() && fail.empty(); ++t) {
        for (int64_t i = 0; i < ps.values[t].size(); ++i) {
          double& th = ps.values[t][i];
          const double orig = th;
          const double h = 1e-6;
          th = orig + h;
          const double f1 = eval(false);
          th = orig - h;
          const double f2 = eval(false);
          th = orig;
          const double fd = (f1 - f2) / (2.0 * h);
          const double got = bp[t][i];
          const double err =
              std::fabs(fd - got) / std::max({std::fabs(fd), std::fabs(got), 1e-9});
          worst_fd = std::max(worst_fd, err);
          if (err > 1e-4) {
            fail = strf("instance %d: surrogate FD err %.2e on %s[%lld]", inst, err,
                        ps.names[t].c_str(), static_cast<long long>(i));
            break;
          }
        }
      }
    }
  }

  return report(fail.empty(), "decoder-invariants",
                fail.empty()
                    ? strf("%d instances: worst |sum-1| %.2e (tol 1e-5), nullity and "
                           "front-slot and exact-product checks bitwise, surrogate FD max rel "
                           "%.2e (tol 1e-4)",
                           kInstances, worst_norm, worst_fd)
                    : fail,
                timer.secs());
}

// ---------------------------------------------------------------------------
// gradient-check: reverse-mode gradient of the full training objective
// against central finite differences on a frozen-noise evaluation. The
// check runs on the float32 parameter point promoted to double so the
// differences are resolvable at the stated tolerance, and flips the
// ordering op to its smooth surrogate in both directions.

int run_gradient_check() {
  Timer timer;
  ModelConfig cfg;
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.channels = 3;
  cfg.K = 2;
  cfg.T = 2;
  cfg.E_view = 2;
  cfg.E_obj = 3;
  cfg.E_bck = 2;
  cfg.D_ft = 6;
  cfg.D_vw = 4;
  cfg.D_at = 6;
  cfg.D_key = 6;
  cfg.D_val = 0;
  cfg.dec_tok_obj = 8;
  cfg.dec_tok_bck = 8;
  cfg.dec_fc_obj = 10;
  cfg.dec_fc_bck = 10;
  cfg.dec_heads_obj = 2;
  cfg.dec_heads_bck = 2;
  cfg.ord_hidden = 6;
  cfg.head_hidden = 6;
  cfg.upd_hidden = 6;
  cfg.finalize();
  cfg.validate();

  GeneratorSpec gen;
  gen.height = 8;
  gen.width = 8;
  gen.min_objects = 1;
  gen.max_objects = 2;
  gen.views = 2;
  gen.validate();
  const Scene sc = generate_scene(gen, scene_seed(31, 0));

  const int64_t B = 1;
  const int64_t M = 2;
  const Tensor<double> images =
      to_nchw(sc.images, cfg.image_height, cfg.image_width).cast<double>();
  const Tensor<double> target = sc.images.cast<double>();

  ParamStore<double> params = make_model_params<float>(cfg, 4321).cast<double>();
  Rng rng(909);
  RngNoise<double> inner(rng);
  ReplayNoise<double> noise(&inner);

  auto eval = [&](bool grad) {
    noise.replay();
    Graph<double> g(grad);
    g.st_surrogate_forward = true;
    Bound<double> b{g, params, {}};
    const InferOut q = infer(b, cfg, B, M, images, noise);
    const LatentSample<double> z = sample_latents(b, q, noise, 1.0, false);
    const LossBreakdown lb = total_loss(b, cfg, B, M, target, q, z);
    if (grad) {
      params.zero_grads();
      g.backward(lb.total_node);
    }
    return lb.total;
  };

  const double base = eval(true);
  if (!std::isfinite(base)) {
    throw std::runtime_error("non-finite objective at the check point");
  }
  const std::vector<Tensor<double>> bp = params.grads;

  const int64_t total = params.total_size();
  int64_t passed = 0, done = 0;
  double worst = 0.0;
  for (size_t t = 0; t < params.values.size(); ++t) {
    for (int64_t i = 0; i < params.values[t].size(); ++i) {
      double& th = params.values[t][i];
      const double orig = th;
      const double h = 1e-5 * std::max(1.0, std::fabs(orig));
      th = orig + h;
      const double f1 = eval(false);
      th = orig - h;
      const double f2 = eval(false);
      th = orig;
      const double fd = (f1 - f2) / (2.0 * h);
      const double got = bp[t][i];
      const bool ok = std::fabs(fd - got) <= 1e-3 * std::max(std::fabs(fd), std::fabs(got)) + 1e-8;
      passed += ok;
      if (!ok) {
        worst = std::max(worst, std::fabs(fd - got) / std::max(std::fabs(fd), std::fabs(got)));
      }
      if (++done % 2000 == 0) {
        std::printf("  [gradient-check] %lld/%lld parameters, %.0fs\n",
                    static_cast<long long>(done), static_cast<long long>(total), timer.secs());
        std::fflush(stdout);
      }
    }
  }

  const double frac = static_cast<double>(passed) / static_cast<double>(total);
  return report(frac >= 0.95, "gradient-check",
                strf("%lld/%lld parameters within 1e-3 relative (%.2f%%, need 95%%)%s",
                     static_cast<long long>(passed), static_cast<long long>(total), 100.0 * frac,
                     frac >= 0.95 ? "" : strf(", worst rel %.2e", worst).c_str()),
                timer.secs());
}

// ---------------------------------------------------------------------------
// metrics-oracles: clustering scores against the brute-force references,
// object matching against exhaustive search, and exact hand cases for the
// overlap, count and ordering scores.

int run_metrics_oracles() {
  Timer timer;
  Rng rng(555);
  std::string fail;

  // clustering scores vs brute force
  double worst_ari = 0.0, worst_ami = 0.0;
  for (int i = 0; i < 200 && fail.empty(); ++i) {
    const int64_t n = rng.uniform_int(2, 64);
    const int64_t kg = rng.uniform_int(1, 5);
    const int64_t kp = rng.uniform_int(1, 5);
    mref::Labels lg(static_cast<size_t>(n)), lp(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
      lg[static_cast<size_t>(j)] = static_cast<int32_t>(rng.uniform_int(0, kg - 1));
      lp[static_cast<size_t>(j)] = static_cast<int32_t>(rng.uniform_int(0, kp - 1));
    }
    const double da = std::fabs(ari_labels(lg, lp) - mref::ari_pairs_ref(lg, lp));
    const double dm = std::fabs(ami_labels(lg, lp) - mref::ami_direct_ref(lg, lp));
    worst_ari = std::max(worst_ari, da);
    worst_ami = std::max(worst_ami, dm);
    if (da > 1e-10 || dm > 1e-10) {
      fail = strf("clustering instance %d: ari off %.2e, ami off %.2e", i, da, dm);
    }
  }

  // object matching vs exhaustive injection search
  for (int t = 0; t < 150 && fail.empty(); ++t) {
    const int64_t kg = rng.uniform_int(1, 3);
    const int64_t kp = rng.uniform_int(kg, 5);
    const int64_t m = rng.uniform_int(1, 2);
    const int64_t n = rng.uniform_int(4, 24);
    std::vector<int64_t> lg(static_cast<size_t>(m * n)), lp(static_cast<size_t>(m * n));
    for (size_t j = 0; j < lg.size(); ++j) {
      lg[j] = rng.uniform_int(0, kg);
      lp[j] = rng.uniform_int(0, kp);
    }
    const SegmentationResult gt = mref::make_seg(m, n, kg, lg);
    const SegmentationResult pred = mref::make_seg(m, n, kp, lp);
    const std::vector<int64_t> xi = match_objects(gt, pred);

    if (static_cast<int64_t>(xi.size()) != kg) {
      fail = strf("matching trial %d: %zu assignments for %lld objects", t, xi.size(),
                  static_cast<long long>(kg));
      break;
    }
    std::vector<int64_t> ov(static_cast<size_t>(kg * kp), 0);
    for (size_t j = 0; j < lg.size(); ++j) {
      if (lg[j] > 0 && lp[j] > 0) {
        ++ov[static_cast<size_t>((lg[j] - 1) * kp + (lp[j] - 1))];
      }
    }
    int64_t got = 0;
    std::vector<bool> used(static_cast<size_t>(kp), false);
    for (int64_t k = 0; k < kg; ++k) {
      if (xi[static_cast<size_t>(k)] < 0 || xi[static_cast<size_t>(k)] >= kp ||
          used[static_cast<size_t>(xi[static_cast<size_t>(k)])]) {
        fail = strf("matching trial %d: assignment is not injective", t);
        break;
      }
      used[static_cast<size_t>(xi[static_cast<size_t>(k)])] = true;
      got += ov[static_cast<size_t>(k * kp + xi[static_cast<size_t>(k)])];
    }
    if (!fail.empty()) {
      break;
    }
    int64_t best = -1;
    std::vector<int64_t> cols(static_cast<size_t>(kp));
    std::iota(cols.begin(), cols.end(), 0);
    do {
      int64_t tot = 0;
      for (int64_t k = 0; k < kg; ++k) {
        tot += ov[static_cast<size_t>(k * kp + cols[static_cast<size_t>(k)])];
      }
      best = std::max(best, tot);
    } while (std::next_permutation(cols.begin(), cols.end()));
    if (got != best) {
      fail = strf("matching trial %d: overlap %lld, exhaustive best %lld", t,
                  static_cast<long long>(got), static_cast<long long>(best));
    }
  }

  // overlap scores, exact hand cases
  if (fail.empty()) {
    TensorF gs({1, 4, 2});
    TensorF ps({1, 4, 2});
    // object 0: gt pixels {0,1}, pred pixel {1}; object 1: both {2,3}
    gs[0 * 2 + 0] = 1;
    gs[1 * 2 + 0] = 1;
    gs[2 * 2 + 1] = 1;
    gs[3 * 2 + 1] = 1;
    ps[1 * 2 + 0] = 1;
    ps[2 * 2 + 1] = 1;
    ps[3 * 2 + 1] = 1;
    const std::vector<int64_t> xi = {0, 1};
    const double iou_v = iou(gs, ps, xi);
    const double f1_v = f1(gs, ps, xi);
    if (iou_v != 0.75) {
      fail = strf("iou hand case: %.17g, want 0.75", iou_v);
    } else if (std::fabs(f1_v - 0.5 * (2.0 / 3.0 + 1.0)) > 1e-14) {
      fail = strf("f1 hand case: %.17g, want 5/6", f1_v);
    }
    if (fail.empty()) {
      // same shapes with the prediction slots swapped
      TensorF ps2({1, 4, 2});
      ps2[1 * 2 + 1] = 1;
      ps2[2 * 2 + 0] = 1;
      ps2[3 * 2 + 0] = 1;
      const std::vector<int64_t> xi2 = {1, 0};
      if (iou(gs, ps2, xi2) != 0.75) {
        fail = "iou is not slot-permutation invariant";
      }
    }
    if (fail.empty()) {
      // an all-zero union counts as vacuous agreement
      TensorF z1({1, 2, 1});
      TensorF z2({1, 2, 1});
      const std::vector<int64_t> xi3 = {0};
      if (iou(z1, z2, xi3) != 1.0 || f1(z1, z2, xi3) != 1.0) {
        fail = "empty-union overlap is not vacuously 1";
      }
    }
  }

  // count accuracy
  if (fail.empty()) {
    const std::vector<int64_t> a = {2, 3, 1, 4};
    const std::vector<int64_t> b = {2, 3, 2, 4};
    if (oca(a, b) != 0.75 || oca(a, a) != 1.0 || oca({1, 2}, {2, 1}) != 0.0) {
      fail = "count accuracy hand cases";
    }
  }

  // ordering accuracy
  if (fail.empty()) {
    // two objects overlapping on one pixel, gt: 0 occludes 1
    TensorF shapes({1, 3, 2});
    shapes[0 * 2 + 0] = 1;
    shapes[1 * 2 + 0] = 1;
    shapes[1 * 2 + 1] = 1;
    shapes[2 * 2 + 1] = 1;
    Tensor<uint8_t> gt_t({1, 2, 2});
    gt_t[0 * 2 + 1] = 1;
    Tensor<uint8_t> agree({1, 2, 2});
    agree[0 * 2 + 1] = 1;
    Tensor<uint8_t> flip({1, 2, 2});
    flip[1 * 2 + 0] = 1;
    const std::vector<int64_t> xi = {0, 1};
    const OoaResult r1 = ooa(gt_t, agree, shapes, xi);
    const OoaResult r2 = ooa(gt_t, flip, shapes, xi);
    if (!r1.valid || r1.value != 1.0 || !r2.valid || r2.value != 0.0) {
      fail = "ordering hand case, single pair";
    }
    if (fail.empty()) {
      // weighted pairs: w(0,1) = 1 agree, w(0,2) = 3 disagree -> 1/4
      TensorF s3({1, 8, 3});
      for (int64_t p = 0; p < 4; ++p) {
        s3[p * 3 + 0] = 1;  // object 0: pixels 0..3
      }
      s3[3 * 3 + 1] = 1;  // object 1: pixels 3,4
      s3[4 * 3 + 1] = 1;
      s3[0 * 3 + 2] = 1;  // object 2: pixels 0,1,2,6
      s3[1 * 3 + 2] = 1;
      s3[2 * 3 + 2] = 1;
      s3[6 * 3 + 2] = 1;
      Tensor<uint8_t> g3({1, 3, 3});
      g3[0 * 3 + 1] = 1;  // 0 occludes 1
      g3[2 * 3 + 0] = 1;  // 2 occludes 0
      g3[1 * 3 + 2] = 1;
      Tensor<uint8_t> p3({1, 3, 3});
      p3[0 * 3 + 1] = 1;  // agrees on (0,1)
      p3[0 * 3 + 2] = 1;  // disagrees on (0,2)
      p3[1 * 3 + 2] = 1;
      const std::vector<int64_t> xi3 = {0, 1, 2};
      const OoaResult r3 = ooa(g3, p3, s3, xi3);
      if (!r3.valid || r3.value != 0.25) {
        fail = strf("ordering hand case, weighted pairs: %.17g", r3.valid ? r3.value : -1.0);
      }
    }
    if (fail.empty()) {
      // second view with no overlapping pair is excluded from the mean
      TensorF s2({2, 3, 2});
      s2[0 * 2 + 0] = 1;
      s2[1 * 2 + 0] = 1;
      s2[1 * 2 + 1] = 1;
      s2[2 * 2 + 1] = 1;  // view 0 as above; view 1 all zero
      Tensor<uint8_t> g2({2, 2, 2});
      g2[0 * 2 + 1] = 1;
      Tensor<uint8_t> p2({2, 2, 2});
      p2[0 * 2 + 1] = 1;
      const OoaResult r4 = ooa(g2, p2, s2, xi);
      if (!r4.valid || r4.value != 1.0) {
        fail = "ordering vacuous-view exclusion";
      }
      TensorF s0({1, 2, 2});  // no overlap anywhere: invalid
      s0[0 * 2 + 0] = 1;
      s0[1 * 2 + 1] = 1;
      Tensor<uint8_t> t0({1, 2, 2});
      const OoaResult r5 = ooa(t0, t0, s0, xi);
      if (r5.valid) {
        fail = "ordering validity flag on disjoint shapes";
      }
    }
  }

  // slot-count heuristic, standalone and through discretize
  if (fail.empty()) {
    if (count_objects_heuristic(mref::make_seg(1, 4, 3, {0, 1, 1, 3}).r) != 2 ||
        count_objects_heuristic(mref::make_seg(1, 4, 3, {0, 0, 0, 0}).r) != 0 ||
        count_objects_heuristic(mref::make_seg(2, 2, 3, {0, 1, 0, 3}).r) != 2) {
      fail = "slot-count heuristic hand cases";
    }
  }
  if (fail.empty()) {
    const int64_t K = 3, N = 4;
    TensorF pf({1, K + 1, N});
    auto put = [&](int64_t k, int64_t n, float v) { pf[k * N + n] = v; };
    put(0, 0, 0.7f);
    put(1, 0, 0.1f);
    put(2, 0, 0.1f);
    put(3, 0, 0.1f);  // pixel 0 -> background
    put(0, 1, 0.2f);
    put(1, 1, 0.6f);
    put(2, 1, 0.1f);
    put(3, 1, 0.1f);  // pixel 1 -> slot 1
    put(0, 2, 0.4f);
    put(1, 2, 0.05f);
    put(2, 2, 0.05f);
    put(3, 2, 0.5f);  // pixel 2 -> slot 3
    put(0, 3, 0.4f);
    put(1, 3, 0.4f);
    put(2, 3, 0.15f);
    put(3, 3, 0.05f);  // pixel 3: tie -> background
    TensorF so({1, K, N});
    TensorF ord({1, K});
    ord[0] = 2.0f;
    ord[1] = 1.0f;
    ord[2] = 0.0f;
    TensorF prs({K});
    prs[0] = 0.9f;
    prs[1] = 0.8f;
    prs[2] = 0.7f;
    const SegmentationResult heur = discretize(pf, so, ord, prs, true);
    const SegmentationResult plain = discretize(pf, so, ord, prs, false);
    const int64_t want[4] = {0, 1, 3, 0};
    for (int64_t n = 0; n < N; ++n) {
      if (heur.label(0, n) != want[n]) {
        fail = strf("discretize label at pixel %lld", static_cast<long long>(n));
        break;
      }
    }
    if (fail.empty() && (heur.K_tilde != 2 || plain.K_tilde != 3)) {
      fail = strf("discretize counts: heuristic %lld, presence %lld",
                  static_cast<long long>(heur.K_tilde), static_cast<long long>(plain.K_tilde));
    }
  }

  return report(fail.empty(), "metrics-oracles",
                fail.empty() ? strf("200 clustering instances within 1e-10 (worst ari %.1e, ami "
                                    "%.1e), 150 matching trials optimal, hand cases exact",
                                    worst_ari, worst_ami)
                             : fail,
                timer.secs());
}

// ---------------------------------------------------------------------------
// train-fixture: build the shared model fixture for the three quality
// criteria. Re-runs reuse an existing fixture when its config matches.

int run_train_fixture(const std::string& dir) {
  Timer timer;
  fs::create_directories(dir);
  Config cfg;
  cfg.finalize();
  cfg.validate();

  const std::string train_dir = dir + "/train_data";
  const std::string held_dir = dir + "/heldout_data";
  const std::string run_dir = dir + "/run";

  if (!fs::exists(train_dir + "/manifest.json")) {
    std::vector<Scene> scenes;
    scenes.reserve(500);
    for (int64_t i = 0; i < 500; ++i) {
      scenes.push_back(generate_scene(cfg.data, scene_seed(static_cast<uint64_t>(cfg.train.seed), i)));
    }
    write_dataset(scenes, cfg.data, train_dir);
    std::printf("[fixture] wrote %s (%.0fs)\n", train_dir.c_str(), timer.secs());
    std::fflush(stdout);
  }
  if (!fs::exists(held_dir + "/manifest.json")) {
    std::vector<Scene> scenes;
    scenes.reserve(50);
    for (int64_t i = 0; i < 50; ++i) {
      scenes.push_back(generate_scene(cfg.data, scene_seed(987654321u, i)));
    }
    write_dataset(scenes, cfg.data, held_dir);
    std::printf("[fixture] wrote %s (%.0fs)\n", held_dir.c_str(), timer.secs());
    std::fflush(stdout);
  }

  const std::string final_ck = run_dir + "/ckpt_final.bin";
  if (fs::exists(final_ck)) {
    const Checkpoint ck = load_checkpoint(final_ck);
    if (ck.step == cfg.train.total_steps && config_to_text(ck.config) == config_to_text(cfg)) {
      std::printf("[fixture] reusing %s at step %lld (%.0fs)\n", final_ck.c_str(),
                  static_cast<long long>(ck.step), timer.secs());
      return 0;
    }
    std::printf("[fixture] %s is stale, retraining\n", final_ck.c_str());
  }

  Trainer tr(cfg, read_dataset(train_dir));
  fs::create_directories(run_dir);
  std::ofstream log(run_dir + "/train_log.jsonl", std::ios::trunc);
  if (!log) {
    throw std::runtime_error("cannot open train log in " + run_dir);
  }
  while (tr.current_step() < cfg.train.total_steps) {
    const TrainStats st = tr.step();
    log << Trainer::log_record(st) << "\n";
    const int64_t done = st.step + 1;
    if (done % 500 == 0) {
      log.flush();
    }
    if (done % 1000 == 0) {
      std::printf("[fixture] step %lld/%lld, total %.3f, %.0fs\n", static_cast<long long>(done),
                  static_cast<long long>(cfg.train.total_steps), st.loss.total, timer.secs());
      std::fflush(stdout);
    }
    if (done % cfg.train.checkpoint_interval == 0 && done < cfg.train.total_steps) {
      save_checkpoint(tr.checkpoint(), run_dir + "/ckpt_" + std::to_string(done) + ".bin");
    }
  }
  log.flush();
  save_checkpoint(tr.checkpoint(), final_ck);
  std::printf("[fixture] wrote %s (%.0fs)\n", final_ck.c_str(), timer.secs());
  return 0;
}

// ---------------------------------------------------------------------------
// desk-learning: the loss comes down and held-out segmentation and count
// scores clear their floors.

int run_desk_learning(const std::string& dir) {
  Timer timer;
  const Checkpoint ck = load_checkpoint(dir + "/run/ckpt_final.bin");

  std::ifstream log(dir + "/run/train_log.jsonl");
  if (!log) {
    throw std::runtime_error("missing train log under " + dir);
  }
  std::vector<double> totals;
  std::string line;
  while (std::getline(log, line)) {
    if (!line.empty()) {
      totals.push_back(json::parse(line).at("total").get<double>());
    }
  }
  if (totals.size() < 20000) {
    throw std::runtime_error(strf("train log has %zu steps, want 20000", totals.size()));
  }
  auto window = [&](size_t lo, size_t hi) {
    double s = 0;
    for (size_t i = lo; i < hi; ++i) {
      s += totals[i];
    }
    return s / static_cast<double>(hi - lo);
  };
  const double early = window(900, 1100);    // smoothed loss around step 1k
  const double late = window(19800, 20000);  // and at the end of training
  const bool ok_loss = late < early;

  const std::vector<Scene> held = read_dataset(dir + "/heldout_data");
  ParamStore<float> params = ck.params;
  const EvalReport rep = evaluate(held, params, ck.config.model, EvalMode::kOcloc, 3, 20260819);
  const double ari_a = rep.stats[0].mean;
  const double ari_o = rep.stats[2].mean;
  const double oca_v = rep.stats[6].mean;

  std::map<int64_t, int64_t> freq;
  for (const Scene& sc : held) {
    ++freq[sc.K_hat];
  }
  int64_t top = 0;
  for (const auto& kv : freq) {
    top = std::max(top, kv.second);
  }
  const double baseline = static_cast<double>(top) / static_cast<double>(held.size());

  const bool pass = ok_loss && ari_o >= 0.6 && ari_a >= 0.4 && oca_v > baseline;
  return report(pass, "desk-learning",
                strf("smoothed loss %.2f @1k -> %.2f @20k, ARI-O %.3f (need 0.6), ARI-A %.3f "
                     "(need 0.4), OCA %.3f vs majority %.3f",
                     early, late, ari_o, ari_a, oca_v, baseline),
                timer.secs());
}

// ---------------------------------------------------------------------------
// object-constancy: matching each view of a two-view scene independently
// against ground truth lands on the same slot assignment.

Scene first_two_views(const Scene& sc) {
  Scene two = sc;
  const int64_t n = sc.pixels(), c = sc.channels, kh = sc.K_hat;
  two.M = 2;
  two.images = TensorF({2, n, c});
  std::memcpy(two.images.ptr(), sc.images.ptr(), sizeof(float) * static_cast<size_t>(2 * n * c));
  two.gt_partition = Tensor<uint8_t>({2, n, kh + 1});
  std::memcpy(two.gt_partition.ptr(), sc.gt_partition.ptr(),
              static_cast<size_t>(2 * n * (kh + 1)));
  two.gt_shapes = TensorF({2, n, kh});
  std::memcpy(two.gt_shapes.ptr(), sc.gt_shapes.ptr(), sizeof(float) * static_cast<size_t>(2 * n * kh));
  two.gt_order = Tensor<uint8_t>({2, kh, kh});
  std::memcpy(two.gt_order.ptr(), sc.gt_order.ptr(), static_cast<size_t>(2 * kh * kh));
  two.viewpoint_params = TensorF({2, 3});
  std::memcpy(two.viewpoint_params.ptr(), sc.viewpoint_params.ptr(), sizeof(float) * 6);
  return two;
}

SegmentationResult view_slice(const SegmentationResult& seg, int64_t m) {
  SegmentationResult out = seg;
  const int64_t n = seg.N, k = seg.K;
  out.M = 1;
  out.r = Tensor<uint8_t>({1, n, k + 1});
  std::memcpy(out.r.ptr(), seg.r.ptr() + m * n * (k + 1), static_cast<size_t>(n * (k + 1)));
  out.s = TensorF({1, n, k});
  std::memcpy(out.s.ptr(), seg.s.ptr() + m * n * k, sizeof(float) * static_cast<size_t>(n * k));
  out.t = Tensor<uint8_t>({1, k, k});
  std::memcpy(out.t.ptr(), seg.t.ptr() + m * k * k, static_cast<size_t>(k * k));
  return out;
}

int run_object_constancy(const std::string& dir) {
  Timer timer;
  const Checkpoint ck = load_checkpoint(dir + "/run/ckpt_final.bin");
  const std::vector<Scene> held = read_dataset(dir + "/heldout_data");
  ParamStore<float> params = ck.params;

  int64_t consistent = 0, total = 0;
  for (size_t i = 0; i < held.size(); ++i) {
    const Scene two = first_two_views(held[i]);
    const SceneDecomposition d = decompose_scene(two, params, ck.config.model,
                                                 Rng::stream(424242, i).next_u64(), false);
    const SegmentationResult gt = from_ground_truth(two);
    const std::vector<int64_t> xi0 = match_objects(view_slice(gt, 0), view_slice(d.seg, 0));
    const std::vector<int64_t> xi1 = match_objects(view_slice(gt, 1), view_slice(d.seg, 1));
    consistent += xi0 == xi1;
    ++total;
  }

  const double frac = static_cast<double>(consistent) / static_cast<double>(total);
  return report(frac >= 0.8, "object-constancy",
                strf("per-view matchings agree on %lld/%lld two-view scenes (%.0f%%, need 80%%)",
                     static_cast<long long>(consistent), static_cast<long long>(total),
                     100.0 * frac),
                timer.secs());
}

// ---------------------------------------------------------------------------
// viewpoint-interpolation: every generated frame carries normalized mixture
// weights, the endpoints are the two posterior view means, and re-decoding
// each frame from the one shared set of object latents reproduces the frame
// bitwise.

int run_viewpoint_interpolation(const std::string& dir) {
  Timer timer;
  const Checkpoint ck = load_checkpoint(dir + "/run/ckpt_final.bin");
  const std::vector<Scene> held = read_dataset(dir + "/heldout_data");
  ParamStore<float> params = ck.params;
  const ModelConfig& cfg = ck.config.model;
  const int64_t steps = 8, K = cfg.K, N = cfg.pixels(), C = cfg.channels, E = cfg.E_view;

  double worst_norm = 0.0;
  std::string fail;
  for (size_t i = 0; i < 5 && fail.empty(); ++i) {
    const Scene& sc = held[i];
    const uint64_t seed = 777 + i;
    const InterpolationResult r = interpolate_viewpoints(sc, params, cfg, steps, seed, false);

    for (int64_t t = 0; t < steps && fail.empty(); ++t) {
      const TensorF& pi = r.pi[static_cast<size_t>(t)];
      for (int64_t n = 0; n < N; ++n) {
        double sum = 0.0;
        for (int64_t k = 0; k <= K; ++k) {
          const float v = pi[k * N + n];
          if (v < 0.0f) {
            fail = strf("scene %zu frame %lld: negative weight", i, static_cast<long long>(t));
            break;
          }
          sum += v;
        }
        worst_norm = std::max(worst_norm, std::fabs(sum - 1.0));
      }
    }
    if (worst_norm > 1e-5) {
      fail = strf("scene %zu: weight sum off by %.2e", i, worst_norm);
    }
    if (!fail.empty()) {
      break;
    }

    // endpoints are the posterior means of the first two stored views
    {
      Rng rng(seed);
      Graph<float> g(false);
      Bound<float> b{g, params, {}};
      RngNoise<float> noise(rng);
      const InferOut q =
          infer(b, cfg, 1, sc.M, to_nchw(sc.images, cfg.image_height, cfg.image_width), noise);
      const TensorF& mu = g.val(q.mu_view);
      if (std::memcmp(r.z_view.front().ptr(), mu.ptr(), sizeof(float) * static_cast<size_t>(E)) !=
              0 ||
          std::memcmp(r.z_view.back().ptr(), mu.ptr() + E, sizeof(float) * static_cast<size_t>(E)) !=
              0) {
        fail = strf("scene %zu: endpoints are not the posterior view means", i);
        break;
      }
    }

    // re-decode from the shared object latents, bitwise
    for (int64_t t = 0; t < steps && fail.empty(); ++t) {
      Graph<float> g(false);
      Bound<float> b{g, params, {}};
      TensorF zv = r.z_view[static_cast<size_t>(t)];
      TensorF zo = r.z_obj;
      TensorF zb = r.z_bck;
      TensorF zp = r.presence;
      const DecodeOut dec =
          decode(b, cfg, 1, 1, g.constant(std::move(zv)), g.constant(std::move(zo)),
                 g.constant(std::move(zb)), g.constant(std::move(zp)));
      const TensorF& pf = g.val(dec.pi_full);
      const TensorF& af = g.val(dec.a_full);
      if (std::memcmp(pf.ptr(), r.pi[static_cast<size_t>(t)].ptr(),
                      sizeof(float) * static_cast<size_t>((K + 1) * N)) != 0) {
        fail = strf("scene %zu frame %lld: weights changed under re-decode", i,
                    static_cast<long long>(t));
        break;
      }
      TensorF frame({N, C});
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int64_t k = 0; k <= K; ++k) {
            acc += static_cast<double>(pf[k * N + n]) *
                   static_cast<double>(af[k * N * C + n * C + c]);
          }
          frame[n * C + c] = static_cast<float>(acc);
        }
      }
      if (std::memcmp(frame.ptr(), r.frames[static_cast<size_t>(t)].ptr(),
                      sizeof(float) * static_cast<size_t>(N * C)) != 0) {
        fail = strf("scene %zu frame %lld: image changed under re-decode", i,
                    static_cast<long long>(t));
      }
    }
  }

  return report(fail.empty(), "viewpoint-interpolation",
                fail.empty() ? strf("5 scenes x %lld frames: worst |sum-1| %.2e (tol 1e-5), "
                                    "endpoints and re-decodes bitwise",
                                    static_cast<long long>(steps), worst_norm)
                             : fail,
                timer.secs());
}

int usage(FILE* out) {
  std::fprintf(out,
               "usage: ocloc_acceptance <criterion> [--dir D]\n"
               "  kl-oracles | decoder-invariants | gradient-check | metrics-oracles |\n"
               "  train-fixture | desk-learning | object-constancy | viewpoint-interpolation\n");
  return out == stdout ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cmd = argc > 1 ? argv[1] : "";
  std::string dir = "acceptance";
  for (int i = 2; i < argc; ++i) {
    if (std::string(argv[i]) == "--dir" && i + 1 < argc) {
      dir = argv[++i];
    } else {
      return usage(stderr);
    }
  }
  try {
    if (cmd == "kl-oracles") {
      return run_kl_oracles();
    }
    if (cmd == "decoder-invariants") {
      return run_decoder_invariants();
    }
    if (cmd == "gradient-check") {
      return run_gradient_check();
    }
    if (cmd == "metrics-oracles") {
      return run_metrics_oracles();
    }
    if (cmd == "train-fixture") {
      return run_train_fixture(dir);
    }
    if (cmd == "desk-learning") {
      return run_desk_learning(dir);
    }
    if (cmd == "object-constancy") {
      return run_object_constancy(dir);
    }
    if (cmd == "viewpoint-interpolation") {
      return run_viewpoint_interpolation(dir);
    }
    if (cmd == "--help" || cmd == "help") {
      return usage(stdout);
    }
    return usage(stderr);
  } catch (const std::exception& e) {
    std::printf("FAIL %s: unhandled error: %s\n", cmd.empty() ? "acceptance" : cmd.c_str(),
                e.what());
    return 1;
  }
}
