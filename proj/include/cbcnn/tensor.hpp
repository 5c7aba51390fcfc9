#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cbcnn/errors.hpp"

namespace cbcnn {

// Dense row-major N-d array of doubles. The universal value type for images,
// feature maps, weights and embeddings.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  // Flat offset of a multi-index, row-major.
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Elementwise arithmetic; shapes must match exactly.
  Tensor add(const Tensor& other) const;
  Tensor sub(const Tensor& other) const;
  Tensor mul(const Tensor& other) const;
  Tensor scaled(double alpha) const;
  void add_in_place(const Tensor& other);

  double sum() const;
  double dot(const Tensor& other) const;

  // Sum over one axis, removing it from the shape.
  Tensor sum_axis(std::size_t axis) const;

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct ComplexVector {
  std::vector<double> re;
  std::vector<double> im;

  ComplexVector() = default;
  explicit ComplexVector(std::size_t n) : re(n, 0.0), im(n, 0.0) {}
  std::size_t size() const { return re.size(); }
};

// Discrete Fourier transform of a real vector, any length >= 1.
// Power-of-two lengths use an iterative radix-2 FFT; others go through
// Bluestein's chirp-z reduction to a power-of-two convolution.
ComplexVector dft(const std::vector<double>& v);

// Inverse transform; returns the real part (imaginary residue is discarded).
std::vector<double> idft(const ComplexVector& f);

// In-place complex FFT on parallel re/im arrays; length must be a power of two.
void fft_pow2(std::vector<double>& re, std::vector<double>& im, bool inverse);

// result[k] = sum_j a[j] * b[(k-j) mod n], computed via the DFT.
std::vector<double> circular_convolve(const std::vector<double>& a,
                                      const std::vector<double>& b);

// CBPT raw tensor format: magic "CBPT", u32 version=1, u32 rank,
// u64 extents[rank], little-endian float64 payload, row-major.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace cbcnn
