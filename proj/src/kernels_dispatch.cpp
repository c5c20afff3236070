#include "ocloc/kernels.hpp"

#include <cstdlib>

namespace ocloc::kern {
namespace {

bool select_avx2() {
  const char* force = std::getenv("OCLOC_FORCE_SCALAR");
  if (force != nullptr && force[0] == '1') {
    return false;
  }
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

}  // namespace

bool avx2_selected() {
  static const bool selected = select_avx2();
  return selected;
}

const Ops& ops() { return avx2_selected() ? avx2_ops() : scalar_ops(); }

}  // namespace ocloc::kern
