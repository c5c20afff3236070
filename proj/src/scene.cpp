#include "ocloc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ocloc {
namespace {

constexpr double kPi = 3.14159265358979323846;

// saturated sprite colors; sampled without replacement per scene
constexpr double kObjectPalette[][3] = {
    {0.90, 0.15, 0.15}, {0.15, 0.80, 0.20}, {0.15, 0.30, 0.90}, {0.95, 0.85, 0.10},
    {0.85, 0.15, 0.80}, {0.10, 0.80, 0.85}, {0.95, 0.55, 0.10}, {0.55, 0.20, 0.85},
};
constexpr int64_t kObjectPaletteSize = 8;

// muted background endpoint colors
constexpr double kBackPalette[][3] = {
    {0.55, 0.60, 0.70}, {0.72, 0.66, 0.54}, {0.48, 0.66, 0.56},
    {0.66, 0.55, 0.66}, {0.62, 0.62, 0.48}, {0.46, 0.55, 0.68},
};
constexpr int64_t kBackPaletteSize = 6;

struct WorldObject {
  double u, v;     // center, u cyclic in [0,1)
  double size;     // half extent
  int shape;       // 0 square, 1 circle, 2 triangle, 3 diamond
  int color;       // palette row
  int64_t depth;   // larger = closer to the camera
};

double wrap_half(double d) {
  d -= std::floor(d + 0.5);
  return d;
}

bool inside(const WorldObject& o, double u, double v) {
  const double du = wrap_half(u - o.u);
  const double dv = v - o.v;
  const double e = o.size;
  switch (o.shape) {
    case 0:
      return std::abs(du) <= e && std::abs(dv) <= e;
    case 1:
      return du * du + dv * dv <= e * e;
    case 2:  // apex up: width grows toward the bottom edge
      return dv >= -e && dv <= e && std::abs(du) <= 0.5 * (dv + e);
    default:
      return std::abs(du) + std::abs(dv) <= e;
  }
}

void write_raw(const fs::path& p, const void* data, size_t bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) {
    throw std::runtime_error("cannot write " + p.string());
  }
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) {
    throw std::runtime_error("short write to " + p.string());
  }
}

void read_raw(const fs::path& p, void* data, size_t bytes) {
  std::ifstream f(p, std::ios::binary);
  if (!f) {
    throw std::runtime_error("cannot read " + p.string());
  }
  f.seekg(0, std::ios::end);
  const auto actual = static_cast<size_t>(f.tellg());
  if (actual != bytes) {
    throw std::runtime_error(p.string() + ": expected " + std::to_string(bytes) +
                             " bytes, found " + std::to_string(actual));
  }
  f.seekg(0);
  f.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) {
    throw std::runtime_error("short read from " + p.string());
  }
}

json spec_to_json(const GeneratorSpec& s) {
  return json{{"height", s.height},
              {"width", s.width},
              {"channels", s.channels},
              {"min_objects", s.min_objects},
              {"max_objects", s.max_objects},
              {"views", s.views},
              {"min_size", s.min_size},
              {"max_size", s.max_size},
              {"min_scale", s.min_scale},
              {"max_scale", s.max_scale},
              {"max_elevation", s.max_elevation},
              {"shadow_dx", s.shadow_dx},
              {"shadow_dy", s.shadow_dy},
              {"shadow_darkness", s.shadow_darkness}};
}

GeneratorSpec spec_from_json(const json& j) {
  GeneratorSpec s;
  s.height = j.at("height").get<int64_t>();
  s.width = j.at("width").get<int64_t>();
  s.channels = j.at("channels").get<int64_t>();
  s.min_objects = j.at("min_objects").get<int64_t>();
  s.max_objects = j.at("max_objects").get<int64_t>();
  s.views = j.at("views").get<int64_t>();
  s.min_size = j.at("min_size").get<double>();
  s.max_size = j.at("max_size").get<double>();
  s.min_scale = j.at("min_scale").get<double>();
  s.max_scale = j.at("max_scale").get<double>();
  s.max_elevation = j.at("max_elevation").get<double>();
  s.shadow_dx = j.at("shadow_dx").get<double>();
  s.shadow_dy = j.at("shadow_dy").get<double>();
  s.shadow_darkness = j.at("shadow_darkness").get<double>();
  return s;
}

}  // namespace

int64_t Scene::label(int64_t m, int64_t n) const {
  const int64_t slots = K_hat + 1;
  for (int64_t k = 0; k < slots; ++k) {
    if (gt_partition[(m * pixels() + n) * slots + k] != 0) {
      return k;
    }
  }
  return 0;
}

uint64_t scene_seed(uint64_t dataset_seed, int64_t index) {
  return Rng::stream(dataset_seed, static_cast<uint64_t>(index)).next_u64();
}

Scene generate_scene(const GeneratorSpec& spec, uint64_t seed) {
  Rng rng(seed);
  const int64_t M = spec.views;
  const int64_t H = spec.height;
  const int64_t W = spec.width;
  const int64_t C = spec.channels;
  const int64_t N = H * W;

  // world: objects, colors, depths, background, then per-view cameras.
  // Draw order is fixed; changing it changes every dataset.
  const int64_t K = rng.uniform_int(spec.min_objects, spec.max_objects);
  std::vector<WorldObject> objects(static_cast<size_t>(K));
  for (auto& o : objects) {
    o.shape = static_cast<int>(rng.uniform_int(0, 3));
    o.u = rng.uniform();
    o.v = rng.uniform(0.20, 0.80);
    o.size = rng.uniform(spec.min_size, spec.max_size);
  }
  std::vector<int64_t> colors(static_cast<size_t>(kObjectPaletteSize));
  std::iota(colors.begin(), colors.end(), 0);
  for (int64_t j = 0; j < K; ++j) {  // partial Fisher-Yates: distinct colors
    const int64_t pick = rng.uniform_int(j, kObjectPaletteSize - 1);
    std::swap(colors[static_cast<size_t>(j)], colors[static_cast<size_t>(pick)]);
    objects[static_cast<size_t>(j)].color = static_cast<int>(colors[static_cast<size_t>(j)]);
  }
  std::vector<int64_t> depth(static_cast<size_t>(K));
  std::iota(depth.begin(), depth.end(), 0);
  for (int64_t j = K - 1; j > 0; --j) {
    const int64_t pick = rng.uniform_int(0, j);
    std::swap(depth[static_cast<size_t>(j)], depth[static_cast<size_t>(pick)]);
  }
  for (int64_t j = 0; j < K; ++j) {
    objects[static_cast<size_t>(j)].depth = depth[static_cast<size_t>(j)];
  }
  const int64_t bg0 = rng.uniform_int(0, kBackPaletteSize - 1);
  int64_t bg1 = rng.uniform_int(0, kBackPaletteSize - 2);
  if (bg1 >= bg0) {
    ++bg1;
  }
  const double bg_phase = rng.uniform();

  Scene sc;
  sc.M = M;
  sc.K_hat = K;
  sc.height = H;
  sc.width = W;
  sc.channels = C;
  sc.seed = seed;
  sc.images = TensorF({M, N, C});
  sc.gt_partition = Tensor<uint8_t>({M, N, K + 1});
  sc.gt_shapes = TensorF({M, N, K});
  sc.gt_order = Tensor<uint8_t>({M, K, K});
  sc.viewpoint_params = TensorF({M, 3});

  for (int64_t m = 0; m < M; ++m) {
    const double shift = rng.uniform();
    const double scale = rng.uniform(spec.min_scale, spec.max_scale);
    const double elev = rng.uniform(-spec.max_elevation, spec.max_elevation);
    sc.viewpoint_params[m * 3 + 0] = static_cast<float>(shift);
    sc.viewpoint_params[m * 3 + 1] = static_cast<float>(scale);
    sc.viewpoint_params[m * 3 + 2] = static_cast<float>(elev);

    for (int64_t i = 0; i < K; ++i) {
      for (int64_t j = 0; j < K; ++j) {
        sc.gt_order[(m * K + i) * K + j] =
            static_cast<uint8_t>(i != j && objects[static_cast<size_t>(i)].depth >
                                               objects[static_cast<size_t>(j)].depth);
      }
    }

    for (int64_t py = 0; py < H; ++py) {
      for (int64_t px = 0; px < W; ++px) {
        const int64_t n = py * W + px;
        const double u = shift + scale * ((static_cast<double>(px) + 0.5) / W);
        const double v = elev + scale * ((static_cast<double>(py) + 0.5) / H);

        int64_t visible = -1;
        for (int64_t j = 0; j < K; ++j) {
          const bool in = inside(objects[static_cast<size_t>(j)], u, v);
          sc.gt_shapes[(m * N + n) * K + j] = in ? 1.0f : 0.0f;
          if (in && (visible < 0 || objects[static_cast<size_t>(j)].depth >
                                        objects[static_cast<size_t>(visible)].depth)) {
            visible = j;
          }
        }
        sc.gt_partition[(m * N + n) * (K + 1) + (visible + 1)] = 1;

        double col[3];
        if (visible >= 0) {
          const auto& o = objects[static_cast<size_t>(visible)];
          for (int c = 0; c < 3; ++c) {
            col[c] = kObjectPalette[o.color][c];
          }
        } else {
          const double tu = 0.5 - 0.5 * std::cos(2.0 * kPi * (u + bg_phase));
          const double fv = 0.75 + 0.25 * std::min(1.0, std::max(0.0, v));
          for (int c = 0; c < 3; ++c) {
            col[c] = (kBackPalette[bg0][c] +
                      tu * (kBackPalette[bg1][c] - kBackPalette[bg0][c])) *
                     fv;
          }
          bool shadow = false;
          for (int64_t j = 0; j < K && !shadow; ++j) {
            shadow = inside(objects[static_cast<size_t>(j)], u - spec.shadow_dx,
                            v - spec.shadow_dy);
          }
          if (shadow) {
            for (double& c : col) {
              c *= 1.0 - spec.shadow_darkness;
            }
          }
        }
        for (int64_t c = 0; c < C; ++c) {
          sc.images[(m * N + n) * C + c] = static_cast<float>(col[std::min<int64_t>(c, 2)]);
        }
      }
    }
  }
  return sc;
}

Scene shuffle_views(const Scene& s, Rng& rng) {
  std::vector<int64_t> perm(static_cast<size_t>(s.M));
  std::iota(perm.begin(), perm.end(), 0);
  for (int64_t j = s.M - 1; j > 0; --j) {
    const int64_t pick = rng.uniform_int(0, j);
    std::swap(perm[static_cast<size_t>(j)], perm[static_cast<size_t>(pick)]);
  }
  Scene out = s;
  const int64_t N = s.pixels();
  for (int64_t m = 0; m < s.M; ++m) {
    const int64_t src = perm[static_cast<size_t>(m)];
    std::copy_n(s.images.ptr() + src * N * s.channels, N * s.channels,
                out.images.ptr() + m * N * s.channels);
    std::copy_n(s.gt_partition.ptr() + src * N * (s.K_hat + 1), N * (s.K_hat + 1),
                out.gt_partition.ptr() + m * N * (s.K_hat + 1));
    std::copy_n(s.gt_shapes.ptr() + src * N * s.K_hat, N * s.K_hat,
                out.gt_shapes.ptr() + m * N * s.K_hat);
    std::copy_n(s.gt_order.ptr() + src * s.K_hat * s.K_hat, s.K_hat * s.K_hat,
                out.gt_order.ptr() + m * s.K_hat * s.K_hat);
    std::copy_n(s.viewpoint_params.ptr() + src * 3, 3, out.viewpoint_params.ptr() + m * 3);
  }
  return out;
}

void write_dataset(const std::vector<Scene>& scenes, const GeneratorSpec& spec,
                   const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["scenes"] = scenes.size();
  manifest["spec"] = spec_to_json(spec);
  manifest["entries"] = json::array();
  for (size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    const std::string name = "scene_" + std::to_string(i);
    const fs::path sdir = fs::path(dir) / name;
    fs::create_directories(sdir);
    write_raw(sdir / "images.f32", s.images.ptr(), static_cast<size_t>(s.images.size()) * 4);
    write_raw(sdir / "gt_partition.u8", s.gt_partition.ptr(),
              static_cast<size_t>(s.gt_partition.size()));
    write_raw(sdir / "gt_shapes.f32", s.gt_shapes.ptr(),
              static_cast<size_t>(s.gt_shapes.size()) * 4);
    write_raw(sdir / "gt_order.u8", s.gt_order.ptr(), static_cast<size_t>(s.gt_order.size()));
    json meta;
    meta["M"] = s.M;
    meta["K_hat"] = s.K_hat;
    meta["height"] = s.height;
    meta["width"] = s.width;
    meta["channels"] = s.channels;
    meta["seed"] = s.seed;
    json vp = json::array();
    for (int64_t j = 0; j < s.viewpoint_params.size(); ++j) {
      vp.push_back(s.viewpoint_params[j]);
    }
    meta["viewpoint_params"] = vp;
    std::ofstream mf(sdir / "meta", std::ios::binary);
    mf << meta.dump(2) << "\n";
    manifest["entries"].push_back(json{{"dir", name}, {"M", s.M}, {"K_hat", s.K_hat}, {"seed", s.seed}});
  }
  std::ofstream f(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!f) {
    throw std::runtime_error("cannot write manifest in " + dir);
  }
  f << manifest.dump(2) << "\n";
}

static json load_manifest(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!f) {
    throw std::runtime_error("cannot open " + dir + "/manifest.json");
  }
  return json::parse(f);
}

GeneratorSpec read_dataset_spec(const std::string& dir) {
  return spec_from_json(load_manifest(dir).at("spec"));
}

std::vector<Scene> read_dataset(const std::string& dir) {
  const json manifest = load_manifest(dir);
  const GeneratorSpec spec = spec_from_json(manifest.at("spec"));
  std::vector<Scene> out;
  for (const auto& entry : manifest.at("entries")) {
    const fs::path sdir = fs::path(dir) / entry.at("dir").get<std::string>();
    std::ifstream mf(sdir / "meta", std::ios::binary);
    if (!mf) {
      throw std::runtime_error("cannot open " + (sdir / "meta").string());
    }
    const json meta = json::parse(mf);
    Scene s;
    s.M = meta.at("M").get<int64_t>();
    s.K_hat = meta.at("K_hat").get<int64_t>();
    s.height = meta.at("height").get<int64_t>();
    s.width = meta.at("width").get<int64_t>();
    s.channels = meta.at("channels").get<int64_t>();
    s.seed = meta.at("seed").get<uint64_t>();
    if (s.M != entry.at("M").get<int64_t>() || s.K_hat != entry.at("K_hat").get<int64_t>()) {
      throw std::runtime_error(sdir.string() + ": manifest/meta mismatch");
    }
    if (s.height != spec.height || s.width != spec.width || s.channels != spec.channels) {
      throw std::runtime_error(sdir.string() + ": geometry differs from dataset spec");
    }
    const int64_t N = s.pixels();
    s.images = TensorF({s.M, N, s.channels});
    s.gt_partition = Tensor<uint8_t>({s.M, N, s.K_hat + 1});
    s.gt_shapes = TensorF({s.M, N, s.K_hat});
    s.gt_order = Tensor<uint8_t>({s.M, s.K_hat, s.K_hat});
    s.viewpoint_params = TensorF({s.M, 3});
    read_raw(sdir / "images.f32", s.images.ptr(), static_cast<size_t>(s.images.size()) * 4);
    read_raw(sdir / "gt_partition.u8", s.gt_partition.ptr(),
             static_cast<size_t>(s.gt_partition.size()));
    read_raw(sdir / "gt_shapes.f32", s.gt_shapes.ptr(),
             static_cast<size_t>(s.gt_shapes.size()) * 4);
    read_raw(sdir / "gt_order.u8", s.gt_order.ptr(), static_cast<size_t>(s.gt_order.size()));
    const auto& vp = meta.at("viewpoint_params");
    if (static_cast<int64_t>(vp.size()) != s.viewpoint_params.size()) {
      throw std::runtime_error(sdir.string() + ": viewpoint_params size mismatch");
    }
    for (int64_t j = 0; j < s.viewpoint_params.size(); ++j) {
      s.viewpoint_params[j] = vp[static_cast<size_t>(j)].get<float>();
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ocloc
