#pragma once

#include <cstdint>
#include <string>

#include "ocloc/tensor.hpp"

namespace ocloc {

// [0,1] -> {0..255} with ties to even, the default FP rounding mode.
uint8_t quantize8(float v);

// Lossless 8-bit PNG. pixels: [H, W, C] in [0,1], C = 1 (gray) or 3 (RGB).
// Values outside [0,1] are clamped.
void write_png(const std::string& path, const TensorF& pixels);

}  // namespace ocloc
