#include "ocloc/viz.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "ocloc/decoder.hpp"
#include "ocloc/encoder.hpp"
#include "ocloc/image.hpp"
#include "ocloc/loss.hpp"

namespace ocloc {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// [N] or [N,C] slice -> [H, W, C] panel
TensorF panel(const float* p, int64_t h, int64_t w, int64_t c) {
  TensorF out({h, w, c});
  std::copy(p, p + h * w * c, out.ptr());
  return out;
}

TensorF gray_as(const float* p, int64_t h, int64_t w, int64_t c) {
  TensorF out({h, w, c});
  for (int64_t n = 0; n < h * w; ++n) {
    for (int64_t i = 0; i < c; ++i) {
      out[n * c + i] = p[n];
    }
  }
  return out;
}

// 2x2 tiling of equal-size [H, W, C] panels
TensorF tile4(const TensorF& a, const TensorF& b, const TensorF& c, const TensorF& d) {
  const int64_t h = a.shape[0];
  const int64_t w = a.shape[1];
  const int64_t ch = a.shape[2];
  TensorF out({2 * h, 2 * w, ch});
  const TensorF* tiles[4] = {&a, &b, &c, &d};
  for (int t = 0; t < 4; ++t) {
    const int64_t y0 = (t / 2) * h;
    const int64_t x0 = (t % 2) * w;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        for (int64_t i = 0; i < ch; ++i) {
          out[((y0 + y) * 2 * w + x0 + x) * ch + i] = (*tiles[t])[(y * w + x) * ch + i];
        }
      }
    }
  }
  return out;
}

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream f(path);
  if (!f) {
    throw std::runtime_error("cannot open for writing: " + path);
  }
  f << j.dump(2) << "\n";
}

}  // namespace

void write_decomposition(const SceneDecomposition& d, const Scene& scene, const ModelConfig& cfg,
                         const std::string& dir) {
  const int64_t M = scene.M;
  const int64_t K = cfg.K;
  const int64_t N = cfg.pixels();
  const int64_t C = cfg.channels;
  const int64_t H = cfg.image_height;
  const int64_t W = cfg.image_width;
  fs::create_directories(dir);

  ordered_json manifest;
  manifest["M"] = M;
  manifest["K"] = K;
  manifest["K_tilde"] = d.seg.K_tilde;
  manifest["presence"] = ordered_json::array();
  for (int64_t k = 0; k < K; ++k) {
    manifest["presence"].push_back(static_cast<int>(d.seg.presence[k]));
  }
  manifest["views"] = ordered_json::array();

  for (int64_t m = 0; m < M; ++m) {
    ordered_json view;
    auto emit = [&](const std::string& name, const TensorF& img) {
      write_png(dir + "/" + name, img);
      return name;
    };
    const std::string vm = "view" + std::to_string(m);
    view["input"] = emit(vm + "_input.png", panel(scene.images.ptr() + m * N * C, H, W, C));
    view["recon"] = emit(vm + "_recon.png", panel(d.recon.ptr() + m * N * C, H, W, C));
    view["background"] = emit(vm + "_bck.png", panel(d.bck.ptr() + m * N * C, H, W, C));
    view["background_shadowed"] =
        emit(vm + "_bck_shadowed.png", panel(d.shadowed.ptr() + m * N * C, H, W, C));
    view["slots"] = ordered_json::array();
    for (int64_t k = 0; k < K; ++k) {
      // appearance | perceived mask / complete silhouette | shadow map
      const TensorF apc = panel(d.apc.ptr() + (m * K + k) * N * C, H, W, C);
      const TensorF pi = gray_as(d.pi_full.ptr() + (m * (K + 1) + k + 1) * N, H, W, C);
      const TensorF sobj = gray_as(d.s_obj.ptr() + (m * K + k) * N, H, W, C);
      const TensorF ssdw = gray_as(d.s_sdw.ptr() + (m * K + k) * N, H, W, C);
      const std::string name = vm + "_slot" + std::to_string(k) + ".png";
      write_png(dir + "/" + name, tile4(apc, pi, sobj, ssdw));
      view["slots"].push_back(name);
    }
    manifest["views"].push_back(view);
  }
  write_json(dir + "/manifest.json", manifest);
}

InterpolationResult interpolate_viewpoints(const Scene& scene, ParamStore<float>& params,
                                           const ModelConfig& cfg, int64_t steps,
                                           uint64_t noise_seed, bool sample_mode) {
  if (steps < 2) {
    throw std::invalid_argument("viewpoint traversal needs at least 2 frames");
  }
  if (!sample_mode && scene.M < 2) {
    throw std::invalid_argument("viewpoint interpolation needs a scene with at least 2 views");
  }
  const int64_t K = cfg.K;
  const int64_t E = cfg.E_view;

  Rng rng(noise_seed);
  InterpolationResult out;
  TensorF mu_view;
  {
    Graph<float> g(false);
    Bound<float> b{g, params, {}};
    RngNoise<float> noise(rng);
    const TensorF x = to_nchw(scene.images, cfg.image_height, cfg.image_width);
    const InferOut q = infer(b, cfg, 1, scene.M, x, noise);
    mu_view = g.val(q.mu_view);
    out.z_obj = g.val(q.mu_obj);
    out.z_bck = g.val(q.mu_bck);
    const TensorF& kappa = g.val(q.kappa);
    out.presence = TensorF({1, K});
    for (int64_t k = 0; k < K; ++k) {
      out.presence[k] = kappa[k] > 0.5f ? 1.0f : 0.0f;
    }
  }

  for (int64_t t = 0; t < steps; ++t) {
    TensorF zv({1, E});
    if (sample_mode) {
      for (int64_t i = 0; i < E; ++i) {
        zv[i] = static_cast<float>(rng.normal());
      }
    } else if (t == 0) {
      std::copy(mu_view.ptr(), mu_view.ptr() + E, zv.ptr());
    } else if (t == steps - 1) {
      std::copy(mu_view.ptr() + E, mu_view.ptr() + 2 * E, zv.ptr());
    } else {
      const float alpha = static_cast<float>(t) / static_cast<float>(steps - 1);
      for (int64_t i = 0; i < E; ++i) {
        zv[i] = (1.0f - alpha) * mu_view[i] + alpha * mu_view[E + i];
      }
    }

    Graph<float> g(false);
    Bound<float> b{g, params, {}};
    const DecodeOut dec = decode(b, cfg, 1, 1, g.constant(zv), g.constant(out.z_obj),
                                 g.constant(out.z_bck), g.constant(out.presence));
    const int64_t N = cfg.pixels();
    const int64_t C = cfg.channels;
    const TensorF& pi_full = g.val(dec.pi_full);  // [1, K+1, N]
    const TensorF& a_full = g.val(dec.a_full);
    TensorF frame({N, C});
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t k = 0; k <= K; ++k) {
          acc += static_cast<double>(pi_full[k * N + n]) *
                 static_cast<double>(a_full[k * N * C + n * C + c]);
        }
        frame[n * C + c] = static_cast<float>(acc);
      }
    }
    out.frames.push_back(std::move(frame));
    out.pi.push_back(pi_full.reshaped({K + 1, N}));
    out.z_view.push_back(std::move(zv));
  }
  return out;
}

void write_interpolation(const InterpolationResult& r, const ModelConfig& cfg,
                         const std::string& dir) {
  fs::create_directories(dir);
  ordered_json manifest;
  manifest["frames"] = ordered_json::array();
  for (size_t t = 0; t < r.frames.size(); ++t) {
    const std::string name = "frame" + std::to_string(t) + ".png";
    write_png(dir + "/" + name,
              r.frames[t].reshaped({cfg.image_height, cfg.image_width, cfg.channels}));
    manifest["frames"].push_back(name);
  }
  write_json(dir + "/manifest.json", manifest);
}

void write_scene_samples(ParamStore<float>& params, const ModelConfig& cfg, int64_t count,
                         int64_t views, uint64_t seed, const std::string& dir) {
  if (count < 1 || views < 1) {
    throw std::invalid_argument("scene sampling needs count >= 1 and views >= 1");
  }
  fs::create_directories(dir);
  Rng rng(seed);
  ordered_json manifest;
  manifest["samples"] = ordered_json::array();
  for (int64_t i = 0; i < count; ++i) {
    const SceneSample<float> s = sample_scene(params, cfg, views, rng);
    ordered_json entry;
    entry["presence"] = ordered_json::array();
    for (int64_t k = 0; k < cfg.K; ++k) {
      entry["presence"].push_back(s.presence[k] > 0.5f ? 1 : 0);
    }
    entry["views"] = ordered_json::array();
    for (int64_t m = 0; m < views; ++m) {
      const std::string mean_name =
          "sample" + std::to_string(i) + "_view" + std::to_string(m) + "_mean.png";
      const std::string draw_name =
          "sample" + std::to_string(i) + "_view" + std::to_string(m) + "_draw.png";
      const int64_t N = cfg.pixels();
      const int64_t C = cfg.channels;
      write_png(dir + "/" + mean_name,
                panel(s.mean.ptr() + m * N * C, cfg.image_height, cfg.image_width, C));
      write_png(dir + "/" + draw_name,
                panel(s.sampled.ptr() + m * N * C, cfg.image_height, cfg.image_width, C));
      entry["views"].push_back({{"mean", mean_name}, {"draw", draw_name}});
    }
    manifest["samples"].push_back(entry);
  }
  write_json(dir + "/manifest.json", manifest);
}

}  // namespace ocloc
