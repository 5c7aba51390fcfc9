#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "cbcnn/errors.hpp"

namespace cbcnn {

// Frozen hash/sign tables for one Count Sketch. Never learned, never
// resampled during a model's lifetime.
struct CountSketchParams {
  std::size_t input_dim = 0;   // c
  std::size_t output_dim = 0;  // d
  std::vector<std::uint32_t> h;  // bin index per input coordinate, < d
  std::vector<std::int8_t> s;    // sign per input coordinate, +-1
};

// Two independent Count Sketches with identical c and d; their circular
// convolution is the Tensor Sketch estimate of the degree-2 polynomial
// kernel feature map.
struct TensorSketchParams {
  std::uint64_t seed = 0;
  CountSketchParams cs1;
  CountSketchParams cs2;

  std::size_t input_dim() const { return cs1.input_dim; }
  std::size_t output_dim() const { return cs1.output_dim; }
};

// Deterministic given seed; cs1/cs2 come from two fixed substreams.
TensorSketchParams make_sketch_params(std::size_t c, std::size_t d, std::uint64_t seed);

// out[k] = sum over i with h[i]==k of s[i]*x[i].
std::vector<double> count_sketch(const std::vector<double>& x, const CountSketchParams& p);

// circular_convolve(count_sketch(x, cs1), count_sketch(x, cs2)) via the DFT.
std::vector<double> tensor_sketch(const std::vector<double>& x, const TensorSketchParams& p);

// Exact gradient of tensor_sketch w.r.t. x: two circular convolutions of the
// upstream gradient with the index-reversed count sketches, gathered through
// the hash tables.
std::vector<double> tensor_sketch_backward(const std::vector<double>& x,
                                           const TensorSketchParams& p,
                                           const std::vector<double>& upstream);

// (x . y)^2 — the quantity both randomized estimators approximate.
double polykernel_exact(const std::vector<double>& x, const std::vector<double>& y);

// Random Maclaurin estimator of the same kernel; cross-check oracle only.
struct RandomMaclaurinParams {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<double> w1;  // row-major [d][c], entries +-1
  std::vector<double> w2;
};

RandomMaclaurinParams make_rm_params(std::size_t c, std::size_t d, std::uint64_t seed);

// out[k] = (1/sqrt(d)) * (W1 x)[k] * (W2 x)[k].
std::vector<double> random_maclaurin(const std::vector<double>& x,
                                     const RandomMaclaurinParams& p);

// Sketch parameter block of the weights file: u32 c, u32 d, u64 seed, then
// explicit h (u32[c]) and s (i8[c]) tables for both sketches. The loader
// re-derives from the seed and rejects files whose tables disagree.
void write_sketch_params(std::ostream& out, const TensorSketchParams& p);
TensorSketchParams read_sketch_params(std::istream& in);

}  // namespace cbcnn
