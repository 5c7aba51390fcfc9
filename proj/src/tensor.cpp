#include "cbcnn/tensor.hpp"

#include <cstring>
#include <fstream>

#include "cbcnn/kernels.hpp"

namespace cbcnn {

namespace {

std::size_t checked_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extent must be >= 1");
    n *= e;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_size(shape_) != data_.size()) {
    throw DimensionError("tensor data length does not match shape");
  }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) throw DimensionError("index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

Tensor Tensor::add(const Tensor& other) const {
  if (!same_shape(other)) throw DimensionError("add: shape mismatch");
  Tensor out(shape_);
  kernels::active().add(data_.data(), other.data_.data(), out.data(), size());
  return out;
}

Tensor Tensor::sub(const Tensor& other) const {
  if (!same_shape(other)) throw DimensionError("sub: shape mismatch");
  Tensor out(shape_);
  kernels::active().sub(data_.data(), other.data_.data(), out.data(), size());
  return out;
}

Tensor Tensor::mul(const Tensor& other) const {
  if (!same_shape(other)) throw DimensionError("mul: shape mismatch");
  Tensor out(shape_);
  kernels::active().mul(data_.data(), other.data_.data(), out.data(), size());
  return out;
}

Tensor Tensor::scaled(double alpha) const {
  Tensor out(shape_);
  kernels::active().scale(alpha, data_.data(), out.data(), size());
  return out;
}

void Tensor::add_in_place(const Tensor& other) {
  if (!same_shape(other)) throw DimensionError("add_in_place: shape mismatch");
  kernels::active().axpy(1.0, other.data_.data(), data_.data(), size());
}

double Tensor::sum() const { return kernels::active().sum(data_.data(), size()); }

double Tensor::dot(const Tensor& other) const {
  if (size() != other.size()) throw DimensionError("dot: length mismatch");
  return kernels::active().dot(data_.data(), other.data_.data(), size());
}

Tensor Tensor::sum_axis(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("sum_axis: axis out of range");
  std::vector<std::size_t> out_shape;
  for (std::size_t a = 0; a < rank(); ++a) {
    if (a != axis) out_shape.push_back(shape_[a]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);

  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape_[a];
  for (std::size_t a = axis + 1; a < rank(); ++a) inner *= shape_[a];
  const std::size_t mid = shape_[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < mid; ++m) {
      kernels::active().axpy(1.0, data_.data() + (o * mid + m) * inner,
                             out.data() + o * inner, inner);
    }
  }
  return out;
}

// ---- CBPT serialization ----

namespace {

constexpr char kMagic[4] = {'C', 'B', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  // x86/ARM little-endian hosts only; asserted at build configure time.
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("tensor file truncated");
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) write_le<std::uint64_t>(out, e);
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw DataError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad tensor magic, expected CBPT");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kVersion) throw DataError("unsupported CBPT version");
  const auto rank = read_le<std::uint32_t>(in);
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = static_cast<std::size_t>(read_le<std::uint64_t>(in));
    if (e == 0) throw DataError("CBPT extent 0");
    n *= e;
  }
  std::vector<double> data(n);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw DataError("tensor payload truncated");
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  return read_tensor(in);
}

}  // namespace cbcnn
