#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "cbcnn/rng.hpp"
#include "cbcnn/tensor.hpp"

using namespace cbcnn;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_gaussian();
  return v;
}

// Naive O(n^2) DFT, the independent oracle for the FFT path.
ComplexVector dft_naive(const std::vector<double>& v) {
  const std::size_t n = v.size();
  ComplexVector out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double angle = -2.0 * M_PI * static_cast<double>(j * k) / static_cast<double>(n);
      re += v[j] * std::cos(angle);
      im += v[j] * std::sin(angle);
    }
    out.re[k] = re;
    out.im[k] = im;
  }
  return out;
}

// Direct double-loop circular convolution oracle.
std::vector<double> convolve_naive(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      out[k] += a[j] * b[(k + n - j % n) % n];
    }
  }
  return out;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_CASE("dft of impulse is constant") {
  const auto f = dft(std::vector<double>{1, 0, 0, 0});
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(f.re[k] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.im[k] == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("dft of zero vector is zero") {
  const auto f = dft(std::vector<double>(13, 0.0));
  for (std::size_t k = 0; k < 13; ++k) {
    CHECK(f.re[k] == 0.0);
    CHECK(f.im[k] == 0.0);
  }
}

TEST_CASE("dft matches naive oracle and round-trips") {
  Rng rng(11);
  for (std::size_t n : {1u, 2u, 5u, 8u, 13u, 64u, 100u, 257u}) {
    const auto v = random_vec(rng, n);
    const auto fast = dft(v);
    const auto naive = dft_naive(v);
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(fast.re[k] == doctest::Approx(naive.re[k]).epsilon(1e-8).scale(1.0));
      CHECK(fast.im[k] == doctest::Approx(naive.im[k]).epsilon(1e-8).scale(1.0));
    }
    const auto back = idft(fast);
    const double bound = 1e-10 * (1.0 + max_abs(v));
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(back[k] - v[k]) <= bound);
  }
}

TEST_CASE("parseval identity") {
  Rng rng(17);
  for (std::size_t n : {8u, 31u, 64u}) {
    const auto v = random_vec(rng, n);
    double time_energy = 0.0;
    for (double x : v) time_energy += x * x;
    const auto f = dft(v);
    double freq_energy = 0.0;
    for (std::size_t k = 0; k < n; ++k) freq_energy += f.re[k] * f.re[k] + f.im[k] * f.im[k];
    freq_energy /= static_cast<double>(n);
    CHECK(std::abs(time_energy - freq_energy) <= 1e-9 * time_energy);
  }
}

TEST_CASE("circular convolution identity and shift") {
  const std::vector<double> x{2.5, -1.0, 7.0};
  auto id = circular_convolve({1, 0, 0}, x);
  CHECK(id[0] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(id[1] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(id[2] == doctest::Approx(7.0).epsilon(1e-12));

  auto shifted = circular_convolve({0, 1, 0}, x);
  CHECK(shifted[0] == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(shifted[1] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(shifted[2] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("circular convolution matches direct sum oracle") {
  Rng rng(23);
  for (std::size_t n : {8u, 32u, 257u}) {
    const auto a = random_vec(rng, n);
    const auto b = random_vec(rng, n);
    const auto fast = circular_convolve(a, b);
    const auto slow = convolve_naive(a, b);
    const double scale = max_abs(slow);
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(std::abs(fast[k] - slow[k]) <= 1e-8 * (1.0 + scale));
    }
  }
}

TEST_CASE("circular convolution rejects length mismatch") {
  CHECK_THROWS_AS(circular_convolve({1, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("tensor construction and invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
}

TEST_CASE("elementwise ops and reductions") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {10, 20, 30, 40});
  auto c = a.add(b);
  CHECK(c.vec() == std::vector<double>{11, 22, 33, 44});
  CHECK(a.mul(b).vec() == std::vector<double>{10, 40, 90, 160});
  CHECK(a.scaled(2.0).vec() == std::vector<double>{2, 4, 6, 8});
  CHECK(a.sum() == 10.0);
  CHECK(a.dot(b) == 300.0);
  CHECK(Tensor({3}).sum() == 0.0);
  CHECK_THROWS_AS(a.add(Tensor({4})), DimensionError);

  Tensor e1({3}, {1, 0, 0});
  CHECK(e1.dot(e1) == 1.0);

  auto rows = a.sum_axis(0);
  CHECK(rows.vec() == std::vector<double>{4, 6});
  auto cols = a.sum_axis(1);
  CHECK(cols.vec() == std::vector<double>{3, 7});
}

TEST_CASE("CBPT round-trip") {
  Rng rng(31);
  Tensor t({3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();

  std::stringstream buf;
  write_tensor(buf, t);
  const Tensor back = read_tensor(buf);
  CHECK(back.shape() == t.shape());
  CHECK(back.vec() == t.vec());
}

TEST_CASE("CBPT rejects bad magic") {
  std::stringstream buf("NOPE-not-a-tensor");
  CHECK_THROWS_AS(read_tensor(buf), DataError);
}
