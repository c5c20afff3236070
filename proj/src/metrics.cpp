#include "ocloc/metrics.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "ocloc/decoder.hpp"
#include "ocloc/encoder.hpp"
#include "ocloc/model.hpp"
#include "ocloc/rng.hpp"

namespace ocloc {

namespace {

// Canonical relabeling by first occurrence; equal vectors mean the two
// labelings induce the same partition.
std::vector<int32_t> canonical(const std::vector<int32_t>& labels) {
  std::vector<int32_t> out(labels.size());
  std::unordered_map<int32_t, int32_t> remap;
  for (size_t i = 0; i < labels.size(); ++i) {
    out[i] = remap.emplace(labels[i], static_cast<int32_t>(remap.size())).first->second;
  }
  return out;
}

bool same_partition(const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
  return canonical(a) == canonical(b);
}

struct Contingency {
  int64_t kg = 0, kp = 0, n = 0;
  std::vector<int64_t> cell;  // [kg, kp]
  std::vector<int64_t> row;   // gt margins
  std::vector<int64_t> col;   // pred margins
};

Contingency contingency(const std::vector<int32_t>& gt, const std::vector<int32_t>& pred) {
  if (gt.size() != pred.size()) {
    throw std::invalid_argument("label vectors differ in length");
  }
  if (gt.empty()) {
    throw std::invalid_argument("empty pixel set");
  }
  Contingency c;
  c.n = static_cast<int64_t>(gt.size());
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || pred[i] < 0) {
      throw std::invalid_argument("negative label");
    }
    c.kg = std::max<int64_t>(c.kg, gt[i] + 1);
    c.kp = std::max<int64_t>(c.kp, pred[i] + 1);
  }
  c.cell.assign(static_cast<size_t>(c.kg * c.kp), 0);
  c.row.assign(static_cast<size_t>(c.kg), 0);
  c.col.assign(static_cast<size_t>(c.kp), 0);
  for (size_t i = 0; i < gt.size(); ++i) {
    ++c.cell[static_cast<size_t>(gt[i] * c.kp + pred[i])];
    ++c.row[static_cast<size_t>(gt[i])];
    ++c.col[static_cast<size_t>(pred[i])];
  }
  return c;
}

double pairs(double x) { return 0.5 * x * (x - 1.0); }

std::vector<int32_t> labels_of(const SegmentationResult& seg, const PixelSet& pixels) {
  std::vector<int32_t> out;
  out.reserve(pixels.size());
  for (int64_t p : pixels) {
    out.push_back(static_cast<int32_t>(seg.label(p / seg.N, p % seg.N)));
  }
  return out;
}

}  // namespace

int64_t SegmentationResult::label(int64_t m, int64_t n) const {
  const uint8_t* row = r.ptr() + (m * N + n) * (K + 1);
  for (int64_t k = 0; k <= K; ++k) {
    if (row[k] != 0) {
      return k;
    }
  }
  return 0;
}

SegmentationResult discretize(const TensorF& pi_full, const TensorF& s_obj, const TensorF& order,
                              const TensorF& presence, bool heuristic_count) {
  if (pi_full.shape.size() != 3 || s_obj.shape.size() != 3 || order.shape.size() != 2 ||
      presence.shape.size() != 1) {
    throw std::invalid_argument("discretize: unexpected rank");
  }
  const int64_t M = pi_full.shape[0];
  const int64_t K = pi_full.shape[1] - 1;
  const int64_t N = pi_full.shape[2];
  if (s_obj.shape[0] != M || s_obj.shape[1] != K || s_obj.shape[2] != N ||
      order.shape[0] != M || order.shape[1] != K || presence.shape[0] != K) {
    throw std::invalid_argument("discretize: inconsistent shapes");
  }

  SegmentationResult out;
  out.M = M;
  out.N = N;
  out.K = K;
  out.r = Tensor<uint8_t>({M, N, K + 1});
  out.s = TensorF({M, N, K});
  out.t = Tensor<uint8_t>({M, K, K});
  out.presence = Tensor<uint8_t>({K});

  for (int64_t m = 0; m < M; ++m) {
    for (int64_t n = 0; n < N; ++n) {
      int64_t best = 0;
      float best_v = pi_full[(m * (K + 1)) * N + n];
      for (int64_t k = 1; k <= K; ++k) {
        const float v = pi_full[(m * (K + 1) + k) * N + n];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out.r[(m * N + n) * (K + 1) + best] = 1;
      for (int64_t k = 0; k < K; ++k) {
        out.s[(m * N + n) * K + k] = s_obj[(m * K + k) * N + n];
      }
    }
    for (int64_t i = 0; i < K; ++i) {
      for (int64_t j = 0; j < K; ++j) {
        if (i == j) {
          continue;
        }
        const float oi = order[m * K + i];
        const float oj = order[m * K + j];
        out.t[(m * K + i) * K + j] = (oi > oj || (oi == oj && i < j)) ? 1 : 0;
      }
    }
  }

  int64_t present = 0;
  for (int64_t k = 0; k < K; ++k) {
    out.presence[k] = presence[k] > 0.5f ? 1 : 0;
    present += out.presence[k];
  }
  out.K_tilde = heuristic_count ? count_objects_heuristic(out.r) : present;
  return out;
}

SegmentationResult from_ground_truth(const Scene& scene) {
  SegmentationResult out;
  out.M = scene.M;
  out.N = scene.pixels();
  out.K = scene.K_hat;
  out.r = scene.gt_partition;
  out.s = scene.gt_shapes;
  out.t = scene.gt_order;
  out.presence = Tensor<uint8_t>({scene.K_hat});
  out.presence.fill(1);
  out.K_tilde = scene.K_hat;
  return out;
}

PixelSet all_pixels(int64_t M, int64_t N) {
  PixelSet out(static_cast<size_t>(M * N));
  std::iota(out.begin(), out.end(), int64_t(0));
  return out;
}

PixelSet object_pixels(const SegmentationResult& gt) {
  PixelSet out;
  for (int64_t m = 0; m < gt.M; ++m) {
    for (int64_t n = 0; n < gt.N; ++n) {
      if (gt.label(m, n) > 0) {
        out.push_back(m * gt.N + n);
      }
    }
  }
  return out;
}

double ari_labels(const std::vector<int32_t>& gt, const std::vector<int32_t>& pred) {
  if (gt.size() < 2) {
    if (gt.size() != pred.size() || gt.empty()) {
      throw std::invalid_argument("ari: bad pixel set");
    }
    return 1.0;  // one pixel: both partitions are the same single cluster
  }
  const Contingency c = contingency(gt, pred);
  double b_all = 0.0, b_row = 0.0, b_col = 0.0;
  for (int64_t v : c.cell) {
    b_all += pairs(static_cast<double>(v));
  }
  for (int64_t v : c.row) {
    b_row += pairs(static_cast<double>(v));
  }
  for (int64_t v : c.col) {
    b_col += pairs(static_cast<double>(v));
  }
  const double total = pairs(static_cast<double>(c.n));
  const double expected = b_row * b_col / total;
  const double denom = 0.5 * (b_row + b_col) - expected;
  if (std::abs(denom) < 1e-12) {
    return same_partition(gt, pred) ? 1.0 : 0.0;
  }
  return (b_all - expected) / denom;
}

double ami_labels(const std::vector<int32_t>& gt, const std::vector<int32_t>& pred) {
  const Contingency c = contingency(gt, pred);
  const double n = static_cast<double>(c.n);

  double h_gt = 0.0, h_pred = 0.0, mi = 0.0;
  for (int64_t v : c.row) {
    if (v > 0) {
      h_gt -= (v / n) * std::log(v / n);
    }
  }
  for (int64_t v : c.col) {
    if (v > 0) {
      h_pred -= (v / n) * std::log(v / n);
    }
  }
  for (int64_t i = 0; i < c.kg; ++i) {
    for (int64_t j = 0; j < c.kp; ++j) {
      const int64_t v = c.cell[static_cast<size_t>(i * c.kp + j)];
      if (v > 0) {
        mi += (v / n) * std::log(n * v / (static_cast<double>(c.row[i]) * c.col[j]));
      }
    }
  }

  // expected MI under the fixed-margin permutation model
  std::vector<double> lf(static_cast<size_t>(c.n + 1), 0.0);
  for (int64_t i = 1; i <= c.n; ++i) {
    lf[static_cast<size_t>(i)] = lf[static_cast<size_t>(i - 1)] + std::log(static_cast<double>(i));
  }
  auto lfac = [&](int64_t x) { return lf[static_cast<size_t>(x)]; };
  double emi = 0.0;
  for (int64_t i = 0; i < c.kg; ++i) {
    const int64_t a = c.row[i];
    for (int64_t j = 0; j < c.kp; ++j) {
      const int64_t b = c.col[j];
      const int64_t lo = std::max<int64_t>(1, a + b - c.n);
      const int64_t hi = std::min(a, b);
      for (int64_t v = lo; v <= hi; ++v) {
        const double logp = lfac(a) + lfac(b) + lfac(c.n - a) + lfac(c.n - b) - lfac(c.n) -
                            lfac(v) - lfac(a - v) - lfac(b - v) - lfac(c.n - a - b + v);
        emi += (v / n) * std::log(n * v / (static_cast<double>(a) * b)) * std::exp(logp);
      }
    }
  }

  const double denom = 0.5 * (h_gt + h_pred) - emi;
  if (std::abs(denom) < 1e-12) {
    return same_partition(gt, pred) ? 1.0 : 0.0;
  }
  return (mi - emi) / denom;
}

double ari(const SegmentationResult& gt, const SegmentationResult& pred, const PixelSet& pixels) {
  return ari_labels(labels_of(gt, pixels), labels_of(pred, pixels));
}

double ami(const SegmentationResult& gt, const SegmentationResult& pred, const PixelSet& pixels) {
  return ami_labels(labels_of(gt, pixels), labels_of(pred, pixels));
}

std::vector<int64_t> assign_max(int64_t rows, int64_t cols, const std::vector<double>& score) {
  if (rows < 1 || cols < rows) {
    throw std::invalid_argument("assign_max: need 1 <= rows <= cols");
  }
  if (static_cast<int64_t>(score.size()) != rows * cols) {
    throw std::invalid_argument("assign_max: score size mismatch");
  }
  // shortest-augmenting-path assignment on negated scores, O(rows^2 cols)
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(rows + 1), 0.0);
  std::vector<double> v(static_cast<size_t>(cols + 1), 0.0);
  std::vector<double> minv(static_cast<size_t>(cols + 1), 0.0);
  std::vector<int64_t> p(static_cast<size_t>(cols + 1), 0);
  std::vector<int64_t> way(static_cast<size_t>(cols + 1), 0);
  for (int64_t i = 1; i <= rows; ++i) {
    p[0] = i;
    int64_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<char> used(static_cast<size_t>(cols + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int64_t i0 = p[static_cast<size_t>(j0)];
      int64_t j1 = -1;
      double delta = kInf;
      for (int64_t j = 1; j <= cols; ++j) {
        if (used[static_cast<size_t>(j)]) {
          continue;
        }
        const double cur = -score[static_cast<size_t>((i0 - 1) * cols + (j - 1))] -
                           u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int64_t j = 0; j <= cols; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int64_t j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int64_t> out(static_cast<size_t>(rows), -1);
  for (int64_t j = 1; j <= cols; ++j) {
    if (p[static_cast<size_t>(j)] > 0) {
      out[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    }
  }
  return out;
}

std::vector<int64_t> match_objects(const SegmentationResult& gt, const SegmentationResult& pred) {
  if (gt.M != pred.M || gt.N != pred.N) {
    throw std::invalid_argument("match_objects: geometry mismatch");
  }
  if (pred.K < gt.K) {
    throw std::invalid_argument("match_objects: prediction has fewer slots than gt objects");
  }
  if (gt.K == 0) {
    return {};
  }
  std::vector<double> overlap(static_cast<size_t>(gt.K * pred.K), 0.0);
  for (int64_t m = 0; m < gt.M; ++m) {
    for (int64_t n = 0; n < gt.N; ++n) {
      const int64_t lg = gt.label(m, n);
      if (lg == 0) {
        continue;
      }
      const int64_t lp = pred.label(m, n);
      if (lp == 0) {
        continue;
      }
      overlap[static_cast<size_t>((lg - 1) * pred.K + (lp - 1))] += 1.0;
    }
  }
  return assign_max(gt.K, pred.K, overlap);
}

namespace {

double overlap_mean(const TensorF& gt_shapes, const TensorF& pred_shapes,
                    const std::vector<int64_t>& xi, bool f1_score) {
  const int64_t M = gt_shapes.shape[0];
  const int64_t N = gt_shapes.shape[1];
  const int64_t Kh = gt_shapes.shape[2];
  const int64_t K = pred_shapes.shape[2];
  if (pred_shapes.shape[0] != M || pred_shapes.shape[1] != N ||
      static_cast<int64_t>(xi.size()) != Kh) {
    throw std::invalid_argument("shape-overlap: inconsistent inputs");
  }
  if (Kh == 0) {
    throw std::invalid_argument("shape-overlap: no ground-truth objects");
  }
  double acc = 0.0;
  for (int64_t k = 0; k < Kh; ++k) {
    const int64_t kp = xi[static_cast<size_t>(k)];
    if (kp < 0 || kp >= K) {
      throw std::invalid_argument("shape-overlap: permutation out of range");
    }
    double inter = 0.0, uni = 0.0;
    for (int64_t m = 0; m < M; ++m) {
      for (int64_t n = 0; n < N; ++n) {
        const float a = gt_shapes[(m * N + n) * Kh + k];
        const float b = pred_shapes[(m * N + n) * K + kp];
        inter += std::min(a, b);
        uni += std::max(a, b);
      }
    }
    if (uni <= 0.0) {
      acc += 1.0;  // both shapes empty: vacuous agreement
    } else {
      acc += f1_score ? 2.0 * inter / (inter + uni) : inter / uni;
    }
  }
  return acc / static_cast<double>(Kh);
}

}  // namespace

double iou(const TensorF& gt_shapes, const TensorF& pred_shapes, const std::vector<int64_t>& xi) {
  return overlap_mean(gt_shapes, pred_shapes, xi, false);
}

double f1(const TensorF& gt_shapes, const TensorF& pred_shapes, const std::vector<int64_t>& xi) {
  return overlap_mean(gt_shapes, pred_shapes, xi, true);
}

int64_t count_objects_heuristic(const Tensor<uint8_t>& r) {
  if (r.shape.size() != 3) {
    throw std::invalid_argument("count heuristic: expected [M, N, K+1]");
  }
  const int64_t M = r.shape[0];
  const int64_t N = r.shape[1];
  const int64_t KK = r.shape[2];
  int64_t used = 0;
  for (int64_t k = 0; k < KK; ++k) {
    bool hit = false;
    for (int64_t p = 0; p < M * N && !hit; ++p) {
      hit = r[p * KK + k] != 0;
    }
    used += hit ? 1 : 0;
  }
  return used - 1;
}

double oca(const std::vector<int64_t>& gt_counts, const std::vector<int64_t>& pred_counts) {
  if (gt_counts.size() != pred_counts.size() || gt_counts.empty()) {
    throw std::invalid_argument("oca: count lists must be nonempty and equal-length");
  }
  int64_t hits = 0;
  for (size_t i = 0; i < gt_counts.size(); ++i) {
    hits += gt_counts[i] == pred_counts[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(gt_counts.size());
}

OoaResult ooa(const Tensor<uint8_t>& gt_order, const Tensor<uint8_t>& pred_order,
              const TensorF& gt_shapes, const std::vector<int64_t>& xi) {
  const int64_t M = gt_shapes.shape[0];
  const int64_t N = gt_shapes.shape[1];
  const int64_t Kh = gt_shapes.shape[2];
  const int64_t K = pred_order.shape[1];
  if (gt_order.shape[0] != M || gt_order.shape[1] != Kh || gt_order.shape[2] != Kh ||
      pred_order.shape[0] != M || pred_order.shape[2] != K ||
      static_cast<int64_t>(xi.size()) != Kh) {
    throw std::invalid_argument("ooa: inconsistent inputs");
  }
  double acc = 0.0;
  int64_t views = 0;
  for (int64_t m = 0; m < M; ++m) {
    double num = 0.0, den = 0.0;
    for (int64_t k1 = 0; k1 < Kh; ++k1) {
      for (int64_t k2 = k1 + 1; k2 < Kh; ++k2) {
        double w = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          w += static_cast<double>(gt_shapes[(m * N + n) * Kh + k1]) *
               static_cast<double>(gt_shapes[(m * N + n) * Kh + k2]);
        }
        if (w <= 0.0) {
          continue;
        }
        den += w;
        const uint8_t want = gt_order[(m * Kh + k1) * Kh + k2];
        const uint8_t got = pred_order[(m * K + xi[static_cast<size_t>(k1)]) * K +
                                       xi[static_cast<size_t>(k2)]];
        if (want == got) {
          num += w;
        }
      }
    }
    if (den > 0.0) {
      acc += num / den;
      ++views;
    }
  }
  OoaResult out;
  out.valid = views > 0;
  out.value = out.valid ? acc / static_cast<double>(views) : 0.0;
  return out;
}

SceneScores score_scene(const Scene& scene, const SegmentationResult& pred) {
  SceneScores out;
  const SegmentationResult gt = from_ground_truth(scene);
  const PixelSet all = all_pixels(scene.M, scene.pixels());
  out.ari_a = ari(gt, pred, all);
  out.ami_a = ami(gt, pred, all);
  const PixelSet obj = object_pixels(gt);
  out.has_object_pixels = !obj.empty();
  if (out.has_object_pixels) {
    out.ari_o = ari(gt, pred, obj);
    out.ami_o = ami(gt, pred, obj);
  }
  out.gt_count = scene.K_hat;
  out.pred_count = pred.K_tilde;
  out.has_objects = scene.K_hat > 0;
  if (out.has_objects) {
    const std::vector<int64_t> xi = match_objects(gt, pred);
    out.iou = iou(scene.gt_shapes, pred.s, xi);
    out.f1 = f1(scene.gt_shapes, pred.s, xi);
    const OoaResult o = ooa(scene.gt_order, pred.t, scene.gt_shapes, xi);
    out.ooa = o.value;
    out.ooa_valid = o.valid;
  }
  return out;
}

TensorF to_nchw(const TensorF& images, int64_t h, int64_t w) {
  const int64_t M = images.shape[0];
  const int64_t N = images.shape[1];
  const int64_t C = images.shape[2];
  if (N != h * w) {
    throw std::invalid_argument("to_nchw: pixel count does not match geometry");
  }
  TensorF out({M, C, h, w});
  for (int64_t m = 0; m < M; ++m) {
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        out[(m * C + c) * N + n] = images[(m * N + n) * C + c];
      }
    }
  }
  return out;
}

SceneDecomposition decompose_scene(const Scene& scene, ParamStore<float>& params,
                                   const ModelConfig& cfg, uint64_t noise_seed,
                                   bool heuristic_count) {
  if (scene.height != cfg.image_height || scene.width != cfg.image_width || scene.channels != cfg.channels) {
    throw std::invalid_argument("decompose: scene geometry does not match the model");
  }
  const int64_t M = scene.M;
  const int64_t K = cfg.K;
  const int64_t N = cfg.pixels();
  const int64_t C = cfg.channels;

  Graph<float> g(false);
  Bound<float> b{g, params, {}};
  Rng rng(noise_seed);
  RngNoise<float> noise(rng);
  InferTrace<float> trace;
  const TensorF x = to_nchw(scene.images, cfg.image_height, cfg.image_width);
  const InferOut q = infer(b, cfg, 1, M, x, noise, &trace);

  const TensorF& kappa = g.val(q.kappa);  // [1, K]
  TensorF z_prs({1, K});
  for (int64_t k = 0; k < K; ++k) {
    z_prs[k] = kappa[k] > 0.5f ? 1.0f : 0.0f;
  }
  const DecodeOut dec =
      decode(b, cfg, 1, M, q.mu_view, q.mu_obj, q.mu_bck, g.constant(z_prs));

  SceneDecomposition out;
  out.pi_full = g.val(dec.pi_full);
  out.s_obj = g.val(dec.s_obj);
  out.s_sdw = g.val(dec.s_sdw);
  out.bck = g.val(dec.bck);
  out.shadowed = g.val(dec.shadowed);
  out.apc = g.val(dec.apc).reshaped({M, K, N, C});
  out.attn = trace.attn;

  const TensorF& a_full = g.val(dec.a_full);
  out.recon = TensorF({M, N, C});
  for (int64_t m = 0; m < M; ++m) {
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t k = 0; k <= K; ++k) {
          acc += static_cast<double>(out.pi_full[(m * (K + 1) + k) * N + n]) *
                 static_cast<double>(a_full[(m * (K + 1) + k) * N * C + n * C + c]);
        }
        out.recon[(m * N + n) * C + c] = static_cast<float>(acc);
      }
    }
  }

  TensorF presence({K});
  for (int64_t k = 0; k < K; ++k) {
    presence[k] = z_prs[k];
  }
  out.seg = discretize(out.pi_full, out.s_obj, g.val(dec.order), presence, heuristic_count);
  return out;
}

const char* EvalReport::name(int i) {
  static const char* kNames[8] = {"ARI-A", "AMI-A", "ARI-O", "AMI-O", "IoU", "F1", "OCA", "OOA"};
  return kNames[i];
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "scenes " << scenes << ", runs " << runs << "\n";
  os << std::fixed << std::setprecision(4);
  for (int i = 0; i < 8; ++i) {
    os << std::left << std::setw(6) << name(i) << " " << stats[i].mean << " ± "
       << stats[i].stddev << "\n";
  }
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["scenes"] = scenes;
  j["runs"] = runs;
  j["metrics"] = nlohmann::ordered_json::object();
  for (int i = 0; i < 8; ++i) {
    j["metrics"][name(i)] = {{"mean", stats[i].mean}, {"std", stats[i].stddev}};
  }
  return j.dump(2) + "\n";
}

EvalReport evaluate(const std::vector<Scene>& scenes, ParamStore<float>& params,
                    const ModelConfig& cfg, EvalMode mode, int64_t runs, uint64_t seed) {
  if (scenes.empty()) {
    throw std::invalid_argument("evaluate: empty dataset");
  }
  if (runs < 1) {
    throw std::invalid_argument("evaluate: need at least one run");
  }
  for (const Scene& sc : scenes) {
    if (mode != EvalMode::kOracle &&
        (sc.height != cfg.image_height || sc.width != cfg.image_width || sc.channels != cfg.channels)) {
      throw std::invalid_argument("evaluate: scene geometry does not match the model");
    }
    if (mode != EvalMode::kOracle && sc.K_hat > cfg.K) {
      throw std::invalid_argument("evaluate: scene has more objects than model slots");
    }
  }

  const int64_t n_scenes = static_cast<int64_t>(scenes.size());
  std::vector<std::array<double, 8>> run_values(static_cast<size_t>(runs));

  for (int64_t r = 0; r < runs; ++r) {
    std::vector<SceneScores> scores(static_cast<size_t>(n_scenes));
    std::atomic<int64_t> cursor{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&]() {
      for (;;) {
        const int64_t i = cursor.fetch_add(1);
        if (i >= n_scenes) {
          return;
        }
        try {
          SegmentationResult pred;
          if (mode == EvalMode::kOracle) {
            pred = from_ground_truth(scenes[static_cast<size_t>(i)]);
          } else {
            const uint64_t ns =
                Rng::stream(seed, static_cast<uint64_t>(r) * static_cast<uint64_t>(n_scenes) +
                                      static_cast<uint64_t>(i))
                    .next_u64();
            pred = decompose_scene(scenes[static_cast<size_t>(i)], params, cfg, ns,
                                   mode == EvalMode::kHeuristic)
                       .seg;
          }
          scores[static_cast<size_t>(i)] = score_scene(scenes[static_cast<size_t>(i)], pred);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) {
            error = std::current_exception();
          }
          cursor.store(n_scenes);
          return;
        }
      }
    };
    const int64_t n_threads =
        std::min<int64_t>(n_scenes, std::max(1u, std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_threads));
    for (int64_t t = 0; t < n_threads; ++t) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) {
      t.join();
    }
    if (error) {
      std::rethrow_exception(error);
    }

    // reduction in scene order, independent of thread schedule
    double s_ari_a = 0, s_ami_a = 0, s_ari_o = 0, s_ami_o = 0, s_iou = 0, s_f1 = 0, s_ooa = 0;
    int64_t n_obj_px = 0, n_obj = 0, n_ooa = 0;
    std::vector<int64_t> gt_counts, pred_counts;
    gt_counts.reserve(static_cast<size_t>(n_scenes));
    pred_counts.reserve(static_cast<size_t>(n_scenes));
    for (const SceneScores& s : scores) {
      s_ari_a += s.ari_a;
      s_ami_a += s.ami_a;
      if (s.has_object_pixels) {
        s_ari_o += s.ari_o;
        s_ami_o += s.ami_o;
        ++n_obj_px;
      }
      if (s.has_objects) {
        s_iou += s.iou;
        s_f1 += s.f1;
        ++n_obj;
      }
      if (s.ooa_valid) {
        s_ooa += s.ooa;
        ++n_ooa;
      }
      gt_counts.push_back(s.gt_count);
      pred_counts.push_back(s.pred_count);
    }
    auto& rv = run_values[static_cast<size_t>(r)];
    rv[0] = s_ari_a / static_cast<double>(n_scenes);
    rv[1] = s_ami_a / static_cast<double>(n_scenes);
    rv[2] = n_obj_px > 0 ? s_ari_o / static_cast<double>(n_obj_px) : 0.0;
    rv[3] = n_obj_px > 0 ? s_ami_o / static_cast<double>(n_obj_px) : 0.0;
    rv[4] = n_obj > 0 ? s_iou / static_cast<double>(n_obj) : 0.0;
    rv[5] = n_obj > 0 ? s_f1 / static_cast<double>(n_obj) : 0.0;
    rv[6] = oca(gt_counts, pred_counts);
    rv[7] = n_ooa > 0 ? s_ooa / static_cast<double>(n_ooa) : 0.0;
  }

  EvalReport report;
  report.runs = runs;
  report.scenes = n_scenes;
  for (int i = 0; i < 8; ++i) {
    double mean = 0.0;
    for (const auto& rv : run_values) {
      mean += rv[static_cast<size_t>(i)];
    }
    mean /= static_cast<double>(runs);
    double var = 0.0;
    for (const auto& rv : run_values) {
      const double d = rv[static_cast<size_t>(i)] - mean;
      var += d * d;
    }
    report.stats[i].mean = mean;
    report.stats[i].stddev = runs > 1 ? std::sqrt(var / static_cast<double>(runs - 1)) : 0.0;
  }
  return report;
}

}  // namespace ocloc
