#include "cbcnn/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace cbcnn::kernels {

const Ops* avx2_ops();  // defined in kernels_avx2.cpp, null when unsupported

const Ops& active() {
  static const Ops* selected = [] {
    const char* force = std::getenv("CBP_FORCE_SCALAR");
    if (force != nullptr && std::strcmp(force, "0") != 0) return &scalar();
    if (const Ops* avx2 = avx2_ops()) return avx2;
    return &scalar();
  }();
  return *selected;
}

}  // namespace cbcnn::kernels
