#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocloc/config.hpp"
#include "ocloc/nn.hpp"
#include "ocloc/rng.hpp"
#include "ocloc/tensor.hpp"

namespace ocloc {

// First and second moment accumulators, parallel to ParamStore order.
struct AdamState {
  std::vector<TensorF> m;
  std::vector<TensorF> v;
  int64_t t = 0;  // completed updates

  void init(const ParamStore<float>& params);
};

// Everything needed to resume training bit-exactly: weights, optimizer
// moments, step counter, trainer rng state, and the full config.
struct Checkpoint {
  int64_t step = 0;
  std::array<uint64_t, 4> rng_state{};
  Config config;
  ParamStore<float> params;
  AdamState adam;
};

// Single versioned binary container; arrays are named little-endian f32.
// Writes go to a temp file in the same directory, then rename.
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ocloc
