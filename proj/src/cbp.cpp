#include "cbcnn/cbp.hpp"

#include <algorithm>
#include <cmath>

#include "cbcnn/kernels.hpp"

namespace cbcnn {

namespace {

void check_feature_map(const Tensor& f, const TensorSketchParams& p) {
  if (f.rank() != 3) throw DimensionError("feature map must be [H, W, C]");
  if (f.extent(2) != p.input_dim()) {
    throw DimensionError("feature map channels do not match sketch input_dim");
  }
}

}  // namespace

PooledEmbedding cbp_forward(const Tensor& f, const TensorSketchParams& p) {
  check_feature_map(f, p);
  const std::size_t locations = f.extent(0) * f.extent(1);
  const std::size_t c = p.input_dim();
  const std::size_t d = p.output_dim();

  // Per-coordinate contribution matrix, [d][locations], summed in sorted
  // order so the pooled value is a function of the descriptor multiset only.
  std::vector<double> contrib(d * locations);
  std::vector<double> descriptor(c);
  for (std::size_t loc = 0; loc < locations; ++loc) {
    std::copy_n(f.data() + loc * c, c, descriptor.begin());
    const std::vector<double> ts = tensor_sketch(descriptor, p);
    for (std::size_t k = 0; k < d; ++k) contrib[k * locations + loc] = ts[k];
  }

  PooledEmbedding out;
  out.stage = PoolStage::raw_pooled;
  out.values.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    double* row = contrib.data() + k * locations;
    std::sort(row, row + locations);
    double acc = 0.0;
    for (std::size_t loc = 0; loc < locations; ++loc) acc += row[loc];
    out.values[k] = acc;
  }
  return out;
}

std::vector<double> signed_sqrt(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::copysign(std::sqrt(std::abs(v[i])), v[i]);
  }
  return out;
}

PooledEmbedding signed_sqrt(const PooledEmbedding& in) {
  return PooledEmbedding{signed_sqrt(in.values), PoolStage::signed_sqrt};
}

double signed_sqrt_grad(double x) {
  const double a = std::max(std::abs(x), kSignedSqrtEps);
  return 0.5 / std::sqrt(a);
}

std::vector<double> l2_normalize(const std::vector<double>& v) {
  const double norm = std::sqrt(kernels::active().dot(v.data(), v.data(), v.size()));
  std::vector<double> out(v.size());
  kernels::active().scale(1.0 / std::max(norm, kL2Eps), v.data(), out.data(), v.size());
  return out;
}

PooledEmbedding l2_normalize(const PooledEmbedding& in) {
  return PooledEmbedding{l2_normalize(in.values), PoolStage::l2_normalized};
}

std::vector<double> cbp_embed(const Tensor& f, const TensorSketchParams& p) {
  return l2_normalize(signed_sqrt(cbp_forward(f, p).values));
}

std::vector<double> l2_normalize_backward(const std::vector<double>& input,
                                          const std::vector<double>& upstream) {
  if (input.size() != upstream.size()) throw DimensionError("l2 backward: length mismatch");
  const auto& ops = kernels::active();
  const std::size_t n = input.size();
  const double norm = std::sqrt(ops.dot(input.data(), input.data(), n));
  std::vector<double> grad(n);
  if (norm <= kL2Eps) {
    ops.scale(1.0 / kL2Eps, upstream.data(), grad.data(), n);
    return grad;
  }
  // y = v/||v||; dv = (u - y (y.u)) / ||v||.
  std::vector<double> y(n);
  ops.scale(1.0 / norm, input.data(), y.data(), n);
  const double proj = ops.dot(y.data(), upstream.data(), n);
  for (std::size_t i = 0; i < n; ++i) grad[i] = (upstream[i] - y[i] * proj) / norm;
  return grad;
}

Tensor cbp_backward(const Tensor& f, const TensorSketchParams& p,
                    const std::vector<double>& upstream) {
  check_feature_map(f, p);
  const std::size_t d = p.output_dim();
  if (upstream.size() != d) throw DimensionError("cbp_backward: upstream length mismatch");

  const std::vector<double> raw = cbp_forward(f, p).values;
  const std::vector<double> sqrted = signed_sqrt(raw);

  std::vector<double> g = l2_normalize_backward(sqrted, upstream);
  for (std::size_t k = 0; k < d; ++k) g[k] *= signed_sqrt_grad(raw[k]);

  // Sum pooling broadcasts the pooled gradient to every location.
  const std::size_t locations = f.extent(0) * f.extent(1);
  const std::size_t c = p.input_dim();
  Tensor grad_map(f.shape());
  std::vector<double> descriptor(c);
  for (std::size_t loc = 0; loc < locations; ++loc) {
    std::copy_n(f.data() + loc * c, c, descriptor.begin());
    const std::vector<double> gx = tensor_sketch_backward(descriptor, p, g);
    std::copy_n(gx.begin(), c, grad_map.data() + loc * c);
  }
  return grad_map;
}

}  // namespace cbcnn
