#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocloc/config.hpp"
#include "ocloc/metrics.hpp"
#include "ocloc/scene.hpp"

namespace ocloc {

// Writes the per-scene decomposition panel set into dir: for every view an
// input, reconstruction, and background with/without shadows panel, plus
// one panel per slot (appearance, perceived mask, complete silhouette,
// shadow map tiled 2x2), M*(K+4) PNG files total, and manifest.json.
void write_decomposition(const SceneDecomposition& d, const Scene& scene, const ModelConfig& cfg,
                         const std::string& dir);

// Viewpoint traversal with frozen scene content. Frames share one z_obj /
// z_bck / presence tensor; only z_view changes. Interpolation runs between
// the inferred viewpoint means of the scene's first two views; sample mode
// draws each frame's z_view from the prior instead.
struct InterpolationResult {
  std::vector<TensorF> frames;  // per frame [N, C] mixture mean
  std::vector<TensorF> pi;      // per frame [K+1, N]
  std::vector<TensorF> z_view;  // per frame [1, E_view]
  TensorF z_obj;                // [K, E_obj]
  TensorF z_bck;                // [1, E_bck]
  TensorF presence;             // [1, K]
};

InterpolationResult interpolate_viewpoints(const Scene& scene, ParamStore<float>& params,
                                           const ModelConfig& cfg, int64_t steps,
                                           uint64_t noise_seed, bool sample_mode);

// Writes frame_<t>.png for each frame plus manifest.json.
void write_interpolation(const InterpolationResult& r, const ModelConfig& cfg,
                         const std::string& dir);

// Ancestral model samples rendered as images: per sample a mean and a
// noise-draw panel per view, plus manifest.json.
void write_scene_samples(ParamStore<float>& params, const ModelConfig& cfg, int64_t count,
                         int64_t views, uint64_t seed, const std::string& dir);

}  // namespace ocloc
