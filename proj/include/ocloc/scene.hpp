#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocloc/config.hpp"
#include "ocloc/rng.hpp"
#include "ocloc/tensor.hpp"

namespace ocloc {

// One multi-view scene with exhaustive ground truth. Pixel index n runs
// row-major over (y, x); slot 0 of gt_partition is background (shadow
// pixels included there by convention).
struct Scene {
  int64_t M = 0;
  int64_t K_hat = 0;
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 0;
  uint64_t seed = 0;
  TensorF images;                // [M, N, C] in [0,1]
  Tensor<uint8_t> gt_partition;  // [M, N, K_hat+1] one-hot
  TensorF gt_shapes;             // [M, N, K_hat] amodal, binary-valued
  Tensor<uint8_t> gt_order;      // [M, K_hat, K_hat]; [m,i,j]=1 iff i occludes j
  TensorF viewpoint_params;      // [M, 3] (shift, scale, elevation); generator-internal

  int64_t pixels() const { return height * width; }
  // hard gt label of pixel n in view m (0 = background)
  int64_t label(int64_t m, int64_t n) const;
};

// Deterministic in (spec, seed): one latent 2D cyclic world, M camera draws,
// per-pixel-center rasterization with shadows offset in a fixed direction.
Scene generate_scene(const GeneratorSpec& spec, uint64_t seed);

// Distinct per-scene seeds for a dataset-level seed.
uint64_t scene_seed(uint64_t dataset_seed, int64_t index);

// Permutes every M-indexed field by a random permutation.
Scene shuffle_views(const Scene& s, Rng& rng);

// Directory layout: manifest.json plus scene_<i>/{images.f32,
// gt_partition.u8, gt_shapes.f32, gt_order.u8, meta}. Round-trip lossless.
void write_dataset(const std::vector<Scene>& scenes, const GeneratorSpec& spec,
                   const std::string& dir);
std::vector<Scene> read_dataset(const std::string& dir);
GeneratorSpec read_dataset_spec(const std::string& dir);

}  // namespace ocloc
