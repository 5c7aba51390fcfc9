#pragma once

#include <vector>

#include "cbcnn/sketch.hpp"
#include "cbcnn/tensor.hpp"

namespace cbcnn {

// Pipeline stage of a pooled vector. Downstream modules only ever see
// l2_normalized; the earlier stages exist for tests and the backward pass.
enum class PoolStage { raw_pooled, signed_sqrt, l2_normalized };

struct PooledEmbedding {
  std::vector<double> values;
  PoolStage stage = PoolStage::raw_pooled;
};

// Derivative clamp radius for signed sqrt; below it the slope at the radius
// is used, since the true derivative diverges at 0.
inline constexpr double kSignedSqrtEps = 1e-8;
// Norm guard for l2_normalize; the zero vector normalizes to itself.
inline constexpr double kL2Eps = 1e-12;

// Sum of per-location tensor sketches over an [H, W, C] feature map.
// Contributions are summed per output coordinate in sorted-value order, so
// the result is bitwise independent of descriptor placement.
PooledEmbedding cbp_forward(const Tensor& feature_map, const TensorSketchParams& p);

// v'[i] = sign(v[i]) * sqrt(|v[i]|).
PooledEmbedding signed_sqrt(const PooledEmbedding& in);
std::vector<double> signed_sqrt(const std::vector<double>& v);
double signed_sqrt_grad(double x);

// v / max(||v||, eps); a zero vector maps to itself.
PooledEmbedding l2_normalize(const PooledEmbedding& in);
std::vector<double> l2_normalize(const std::vector<double>& v);

// Full chain: pool, signed sqrt, l2 normalize.
std::vector<double> cbp_embed(const Tensor& feature_map, const TensorSketchParams& p);

// Gradient of the full chain w.r.t. the feature map, given the upstream
// gradient w.r.t. the normalized output.
Tensor cbp_backward(const Tensor& feature_map, const TensorSketchParams& p,
                    const std::vector<double>& upstream);

// Gradient of l2_normalize alone; exposed for the network backward pass.
std::vector<double> l2_normalize_backward(const std::vector<double>& input,
                                          const std::vector<double>& upstream);

}  // namespace cbcnn
