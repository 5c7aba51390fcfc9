#include "cbcnn/sketch.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "cbcnn/kernels.hpp"
#include "cbcnn/rng.hpp"
#include "cbcnn/tensor.hpp"

namespace cbcnn {

namespace {

CountSketchParams make_count_sketch(std::size_t c, std::size_t d, Rng rng) {
  CountSketchParams p;
  p.input_dim = c;
  p.output_dim = d;
  p.h.resize(c);
  p.s.resize(c);
  for (std::size_t i = 0; i < c; ++i) {
    p.h[i] = static_cast<std::uint32_t>(rng.next_below(d));
    p.s[i] = (rng.next_u64() & 1) ? 1 : -1;
  }
  return p;
}

}  // namespace

TensorSketchParams make_sketch_params(std::size_t c, std::size_t d, std::uint64_t seed) {
  if (c < 1 || d < 1) throw DimensionError("sketch dims must be >= 1");
  Rng root(seed);
  TensorSketchParams p;
  p.seed = seed;
  p.cs1 = make_count_sketch(c, d, root.substream(1));
  p.cs2 = make_count_sketch(c, d, root.substream(2));
  return p;
}

std::vector<double> count_sketch(const std::vector<double>& x, const CountSketchParams& p) {
  if (x.size() != p.input_dim) throw DimensionError("count_sketch: input length mismatch");
  std::vector<double> out(p.output_dim, 0.0);
  for (std::size_t i = 0; i < p.input_dim; ++i) {
    out[p.h[i]] += static_cast<double>(p.s[i]) * x[i];
  }
  return out;
}

std::vector<double> tensor_sketch(const std::vector<double>& x, const TensorSketchParams& p) {
  return circular_convolve(count_sketch(x, p.cs1), count_sketch(x, p.cs2));
}

std::vector<double> tensor_sketch_backward(const std::vector<double>& x,
                                           const TensorSketchParams& p,
                                           const std::vector<double>& upstream) {
  const std::size_t c = p.input_dim();
  const std::size_t d = p.output_dim();
  if (x.size() != c) throw DimensionError("tensor_sketch_backward: input length mismatch");
  if (upstream.size() != d) throw DimensionError("tensor_sketch_backward: upstream length mismatch");

  const std::vector<double> cs1 = count_sketch(x, p.cs1);
  const std::vector<double> cs2 = count_sketch(x, p.cs2);

  // d(out_k)/d(x_i) = s1_i*cs2[(k-h1_i) mod d] + s2_i*cs1[(k-h2_i) mod d].
  // Contracting with the upstream gradient gives, per branch, the circular
  // cross-correlation of upstream with the other branch's sketch, which is a
  // circular convolution with the index-reversed sketch.
  auto reversed = [d](const std::vector<double>& v) {
    std::vector<double> r(d);
    r[0] = v[0];
    for (std::size_t m = 1; m < d; ++m) r[m] = v[d - m];
    return r;
  };
  const std::vector<double> corr1 = circular_convolve(upstream, reversed(cs2));
  const std::vector<double> corr2 = circular_convolve(upstream, reversed(cs1));

  std::vector<double> grad(c);
  for (std::size_t i = 0; i < c; ++i) {
    grad[i] = static_cast<double>(p.cs1.s[i]) * corr1[p.cs1.h[i]] +
              static_cast<double>(p.cs2.s[i]) * corr2[p.cs2.h[i]];
  }
  return grad;
}

double polykernel_exact(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("polykernel_exact: length mismatch");
  const double d = kernels::active().dot(x.data(), y.data(), x.size());
  return d * d;
}

RandomMaclaurinParams make_rm_params(std::size_t c, std::size_t d, std::uint64_t seed) {
  if (c < 1 || d < 1) throw DimensionError("rm dims must be >= 1");
  Rng root(seed);
  Rng r1 = root.substream(1);
  Rng r2 = root.substream(2);
  RandomMaclaurinParams p;
  p.input_dim = c;
  p.output_dim = d;
  p.w1.resize(c * d);
  p.w2.resize(c * d);
  for (auto& w : p.w1) w = r1.next_sign();
  for (auto& w : p.w2) w = r2.next_sign();
  return p;
}

std::vector<double> random_maclaurin(const std::vector<double>& x,
                                     const RandomMaclaurinParams& p) {
  if (x.size() != p.input_dim) throw DimensionError("random_maclaurin: input length mismatch");
  const auto& ops = kernels::active();
  std::vector<double> out(p.output_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.output_dim));
  for (std::size_t k = 0; k < p.output_dim; ++k) {
    const double a = ops.dot(p.w1.data() + k * p.input_dim, x.data(), p.input_dim);
    const double b = ops.dot(p.w2.data() + k * p.input_dim, x.data(), p.input_dim);
    out[k] = scale * a * b;
  }
  return out;
}

// ---- serialization ----

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("sketch parameter block truncated");
  return value;
}

void write_tables(std::ostream& out, const CountSketchParams& p) {
  out.write(reinterpret_cast<const char*>(p.h.data()),
            static_cast<std::streamsize>(p.h.size() * sizeof(std::uint32_t)));
  out.write(reinterpret_cast<const char*>(p.s.data()),
            static_cast<std::streamsize>(p.s.size()));
}

void read_tables(std::istream& in, CountSketchParams& p) {
  p.h.resize(p.input_dim);
  p.s.resize(p.input_dim);
  in.read(reinterpret_cast<char*>(p.h.data()),
          static_cast<std::streamsize>(p.h.size() * sizeof(std::uint32_t)));
  in.read(reinterpret_cast<char*>(p.s.data()), static_cast<std::streamsize>(p.s.size()));
  if (!in) throw DataError("sketch tables truncated");
}

bool same_tables(const CountSketchParams& a, const CountSketchParams& b) {
  return a.h == b.h && a.s == b.s;
}

}  // namespace

void write_sketch_params(std::ostream& out, const TensorSketchParams& p) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.input_dim()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.output_dim()));
  write_le<std::uint64_t>(out, p.seed);
  write_tables(out, p.cs1);
  write_tables(out, p.cs2);
}

TensorSketchParams read_sketch_params(std::istream& in) {
  TensorSketchParams p;
  const auto c = read_le<std::uint32_t>(in);
  const auto d = read_le<std::uint32_t>(in);
  p.seed = read_le<std::uint64_t>(in);
  p.cs1.input_dim = p.cs2.input_dim = c;
  p.cs1.output_dim = p.cs2.output_dim = d;
  read_tables(in, p.cs1);
  read_tables(in, p.cs2);
  for (const auto& cs : {p.cs1, p.cs2}) {
    for (std::size_t i = 0; i < cs.input_dim; ++i) {
      if (cs.h[i] >= d) throw DataError("sketch hash index out of range");
      if (cs.s[i] != 1 && cs.s[i] != -1) throw DataError("sketch sign not +-1");
    }
  }
  const TensorSketchParams rederived = make_sketch_params(c, d, p.seed);
  if (!same_tables(p.cs1, rederived.cs1) || !same_tables(p.cs2, rederived.cs2)) {
    throw DataError("sketch tables inconsistent with stored seed");
  }
  return p;
}

}  // namespace cbcnn
