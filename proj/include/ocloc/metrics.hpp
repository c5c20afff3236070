#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocloc/config.hpp"
#include "ocloc/nn.hpp"
#include "ocloc/scene.hpp"
#include "ocloc/tensor.hpp"

namespace ocloc {

// Hard per-pixel decomposition in the shape the segmentation metrics
// consume. Slot 0 of r is background; object slot k of s/t/presence is
// partition slot k+1.
struct SegmentationResult {
  int64_t M = 0;
  int64_t N = 0;
  int64_t K = 0;
  Tensor<uint8_t> r;         // [M, N, K+1] one-hot partition
  TensorF s;                 // [M, N, K] complete object silhouettes in [0,1]
  Tensor<uint8_t> t;         // [M, K, K]; [m,i,j]=1 iff object i occludes j
  Tensor<uint8_t> presence;  // [K]
  int64_t K_tilde = 0;

  int64_t label(int64_t m, int64_t n) const;  // hard slot of a pixel
};

// pi_full: [M, K+1, N] normalized mixture weights; s_obj: [M, K, N];
// order: [M, K] higher occludes; presence: [K] in [0,1], hardened at 0.5.
// Argmax ties resolve to the lowest slot index. heuristic_count selects
// the max-over-pixels object count instead of the presence sum.
SegmentationResult discretize(const TensorF& pi_full, const TensorF& s_obj, const TensorF& order,
                              const TensorF& presence, bool heuristic_count);

// Ground truth recast as a SegmentationResult (K = K_hat, all present).
SegmentationResult from_ground_truth(const Scene& scene);

// Pixel selector: flattened m * N + n indices. Nonempty when used.
using PixelSet = std::vector<int64_t>;
PixelSet all_pixels(int64_t M, int64_t N);
// Pixels whose ground-truth slot is an object.
PixelSet object_pixels(const SegmentationResult& gt);

// Label-vector cores, exposed for oracle tests. Both are invariant to
// relabeling; the degenerate both-single-cluster case scores 1 when the
// partitions coincide and 0 otherwise.
double ari_labels(const std::vector<int32_t>& gt, const std::vector<int32_t>& pred);
double ami_labels(const std::vector<int32_t>& gt, const std::vector<int32_t>& pred);

double ari(const SegmentationResult& gt, const SegmentationResult& pred, const PixelSet& pixels);
double ami(const SegmentationResult& gt, const SegmentationResult& pred, const PixelSet& pixels);

// Maximum-score linear sum assignment on a row-major [rows, cols] matrix,
// rows <= cols. out[i] is the column assigned to row i.
std::vector<int64_t> assign_max(int64_t rows, int64_t cols, const std::vector<double>& score);

// Object matching by partition overlap: xi[k] is the prediction object
// slot (0-based, i.e. partition slot xi[k]+1) for ground-truth object k.
// Requires pred.K >= gt.K.
std::vector<int64_t> match_objects(const SegmentationResult& gt, const SegmentationResult& pred);

// Soft amodal overlap scores, averaged over the gt objects. gt_shapes is
// [M, N, K_hat], pred_shapes [M, N, K], xi from match_objects. An all-zero
// union contributes 1 (vacuous agreement).
double iou(const TensorF& gt_shapes, const TensorF& pred_shapes, const std::vector<int64_t>& xi);
double f1(const TensorF& gt_shapes, const TensorF& pred_shapes, const std::vector<int64_t>& xi);

// Number of used slots minus one (the background slot).
int64_t count_objects_heuristic(const Tensor<uint8_t>& r);

double oca(const std::vector<int64_t>& gt_counts, const std::vector<int64_t>& pred_counts);

// Pairwise ordering accuracy weighted by gt amodal overlap, averaged over
// the views that have any overlapping pair. valid is false when no view
// does; such scenes are excluded from the dataset mean.
struct OoaResult {
  double value = 0.0;
  bool valid = false;
};
OoaResult ooa(const Tensor<uint8_t>& gt_order, const Tensor<uint8_t>& pred_order,
              const TensorF& gt_shapes, const std::vector<int64_t>& xi);

// All per-scene scores against ground truth. Flags mark terms that are
// undefined for the scene and excluded from dataset means.
struct SceneScores {
  double ari_a = 0, ami_a = 0;
  double ari_o = 0, ami_o = 0;
  bool has_object_pixels = false;
  double iou = 0, f1 = 0;
  bool has_objects = false;
  double ooa = 0;
  bool ooa_valid = false;
  int64_t gt_count = 0;
  int64_t pred_count = 0;
};
SceneScores score_scene(const Scene& scene, const SegmentationResult& pred);

enum class EvalMode { kOcloc, kHeuristic, kOracle };

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;
};

// Table columns, fixed order: ARI-A, AMI-A, ARI-O, AMI-O, IoU, F1, OCA, OOA.
struct EvalReport {
  int64_t runs = 0;
  int64_t scenes = 0;
  MetricStats stats[8];
  static const char* name(int i);
  std::string to_text() const;
  std::string to_json() const;
};

// Per run: inference with a run-specific noise stream, posterior means and
// hard presence decoded and discretized, metrics averaged over scenes.
// Reported statistics are mean and sample standard deviation across runs.
// Oracle mode scores ground truth against itself.
EvalReport evaluate(const std::vector<Scene>& scenes, ParamStore<float>& params,
                    const ModelConfig& cfg, EvalMode mode, int64_t runs, uint64_t seed);

// One inference pass on a scene: posterior means, hard presence, decode,
// discretize. Exposed for the CLI decompose path and tests.
struct SceneDecomposition {
  SegmentationResult seg;
  TensorF recon;    // [M, N, C] mixture mean
  TensorF apc;      // [M, K, N, C] object appearances
  TensorF bck;      // [M, N, C] shadow-free background
  TensorF shadowed; // [M, N, C] background with shadows
  TensorF pi_full;  // [M, K+1, N]
  TensorF s_obj;    // [M, K, N]
  TensorF s_sdw;    // [M, K, N]
  TensorF attn;     // [M, K, N'] final-iteration attention
};
SceneDecomposition decompose_scene(const Scene& scene, ParamStore<float>& params,
                                   const ModelConfig& cfg, uint64_t noise_seed, bool heuristic_count);

// [M, N, C] images repacked as the [M, C, H, W] encoder input.
TensorF to_nchw(const TensorF& images, int64_t h, int64_t w);

}  // namespace ocloc
