#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "cbcnn/rng.hpp"
#include "cbcnn/sketch.hpp"
#include "cbcnn/tensor.hpp"

using namespace cbcnn;

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double norm2 = 0.0;
  for (auto& x : v) {
    x = rng.next_gaussian();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_gaussian();
  return v;
}

// Direct scatter oracle for count_sketch.
std::vector<double> count_sketch_oracle(const std::vector<double>& x,
                                        const CountSketchParams& p) {
  std::vector<double> out(p.output_dim, 0.0);
  for (std::size_t k = 0; k < p.output_dim; ++k) {
    for (std::size_t i = 0; i < p.input_dim; ++i) {
      if (p.h[i] == k) out[k] += static_cast<double>(p.s[i]) * x[i];
    }
  }
  return out;
}

// Direct cyclic-sum tensor sketch, the non-DFT route.
std::vector<double> tensor_sketch_direct(const std::vector<double>& x,
                                         const TensorSketchParams& p) {
  const auto a = count_sketch(x, p.cs1);
  const auto b = count_sketch(x, p.cs2);
  const std::size_t d = a.size();
  std::vector<double> out(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < d; ++j) out[k] += a[j] * b[(k + d - j) % d];
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

TEST_CASE("make_sketch_params is deterministic and well formed") {
  const auto a = make_sketch_params(4, 4, 7);
  const auto b = make_sketch_params(4, 4, 7);
  CHECK(a.cs1.h == b.cs1.h);
  CHECK(a.cs1.s == b.cs1.s);
  CHECK(a.cs2.h == b.cs2.h);
  CHECK(a.cs2.s == b.cs2.s);
  CHECK(a.cs1.h != a.cs2.h);  // independent substreams

  const auto big = make_sketch_params(512, 8192, 99);
  CHECK(big.input_dim() == 512);
  CHECK(big.output_dim() == 8192);
  for (std::size_t i = 0; i < 512; ++i) {
    CHECK(big.cs1.h[i] < 8192);
    CHECK((big.cs1.s[i] == 1 || big.cs1.s[i] == -1));
  }
}

TEST_CASE("hash distribution is uniform (chi-square)") {
  // 1e5 hash draws over d bins; chi-square test at p > 0.01.
  const std::size_t d = 32;
  const std::size_t draws = 100000;
  const auto p = make_sketch_params(draws / 2, d, 1234);
  std::vector<std::size_t> counts(d, 0);
  for (auto h : p.cs1.h) ++counts[h];
  for (auto h : p.cs2.h) ++counts[h];
  const double expected = static_cast<double>(draws) / d;
  double chi2 = 0.0;
  for (auto c : counts) {
    const double diff = static_cast<double>(c) - expected;
    chi2 += diff * diff / expected;
  }
  // 99th percentile of chi-square with 31 dof.
  CHECK(chi2 < 52.19);
}

TEST_CASE("count_sketch basics") {
  const auto p = make_sketch_params(6, 8, 3);
  CHECK(count_sketch(std::vector<double>(6, 0.0), p.cs1) == std::vector<double>(8, 0.0));

  CountSketchParams identity;
  identity.input_dim = identity.output_dim = 5;
  identity.h = {0, 1, 2, 3, 4};
  identity.s = {1, 1, 1, 1, 1};
  const std::vector<double> x{1, -2, 3, -4, 5};
  CHECK(count_sketch(x, identity) == x);

  CHECK_THROWS_AS(count_sketch({1, 2}, p.cs1), DimensionError);
}

TEST_CASE("count_sketch matches scatter oracle exactly") {
  Rng rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    const auto p = make_sketch_params(24, 16, 100 + rep);
    const auto x = random_vec(rng, 24);
    CHECK(count_sketch(x, p.cs1) == count_sketch_oracle(x, p.cs1));
    CHECK(count_sketch(x, p.cs2) == count_sketch_oracle(x, p.cs2));
  }
}

TEST_CASE("count_sketch linearity") {
  Rng rng(43);
  const auto p = make_sketch_params(32, 16, 5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto x = random_vec(rng, 32);
    const auto y = random_vec(rng, 32);
    const double alpha = rng.next_gaussian();
    const double beta = rng.next_gaussian();
    std::vector<double> combo(32);
    for (std::size_t i = 0; i < 32; ++i) combo[i] = alpha * x[i] + beta * y[i];
    const auto lhs = count_sketch(combo, p.cs1);
    const auto sx = count_sketch(x, p.cs1);
    const auto sy = count_sketch(y, p.cs1);
    for (std::size_t k = 0; k < 16; ++k) {
      CHECK(std::abs(lhs[k] - (alpha * sx[k] + beta * sy[k])) <= 1e-12 * (1.0 + std::abs(lhs[k])));
    }
  }
}

TEST_CASE("tensor_sketch of zero is zero") {
  const auto p = make_sketch_params(8, 16, 9);
  const auto out = tensor_sketch(std::vector<double>(8, 0.0), p);
  for (double v : out) CHECK(std::abs(v) <= 1e-15);
}

TEST_CASE("DFT path equals direct convolution path") {
  Rng rng(47);
  for (std::size_t d : {16u, 64u, 256u}) {
    const auto p = make_sketch_params(32, d, 51 + d);
    const auto x = random_vec(rng, 32);
    const auto fast = tensor_sketch(x, p);
    const auto slow = tensor_sketch_direct(x, p);
    double scale = 0.0;
    for (double v : slow) scale = std::max(scale, std::abs(v));
    for (std::size_t k = 0; k < d; ++k) {
      CHECK(std::abs(fast[k] - slow[k]) <= 1e-8 * (1.0 + scale));
    }
  }
}

TEST_CASE("tensor sketch inner products estimate the polynomial kernel") {
  // Sample mean over 20 independent draws within 2 SE of (x.y)^2.
  Rng rng(53);
  const std::size_t c = 64, d = 512, draws = 20;
  int ok = 0;
  const int pairs = 20;
  for (int pair = 0; pair < pairs; ++pair) {
    const auto x = random_unit(rng, c);
    const auto y = random_unit(rng, c);
    const double exact = polykernel_exact(x, y);
    std::vector<double> est(draws);
    for (std::size_t t = 0; t < draws; ++t) {
      const auto p = make_sketch_params(c, d, 1000 * pair + t);
      est[t] = dot(tensor_sketch(x, p), tensor_sketch(y, p));
    }
    const double mean = std::accumulate(est.begin(), est.end(), 0.0) / draws;
    double var = 0.0;
    for (double e : est) var += (e - mean) * (e - mean);
    var /= (draws - 1);
    const double se = std::sqrt(var / draws);
    if (std::abs(mean - exact) <= 2.0 * se) ++ok;
  }
  CHECK(ok >= pairs - 2);  // 2 SE covers ~95%
}

TEST_CASE("tensor_sketch_backward matches finite differences") {
  Rng rng(59);
  const std::size_t c = 8, d = 16;
  const auto p = make_sketch_params(c, d, 61);

  SUBCASE("zero upstream gives zero gradient") {
    const auto g = tensor_sketch_backward(random_vec(rng, c), p, std::vector<double>(d, 0.0));
    for (double v : g) CHECK(v == 0.0);
  }

  SUBCASE("zero input gives zero gradient") {
    const auto g = tensor_sketch_backward(std::vector<double>(c, 0.0), p, random_vec(rng, d));
    for (double v : g) CHECK(std::abs(v) <= 1e-12);
  }

  SUBCASE("central differences, step 1e-6") {
    const auto x = random_vec(rng, c);
    const auto upstream = random_vec(rng, d);
    const auto grad = tensor_sketch_backward(x, p, upstream);
    const double step = 1e-6;
    for (std::size_t i = 0; i < c; ++i) {
      auto xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      const double fd =
          (dot(tensor_sketch(xp, p), upstream) - dot(tensor_sketch(xm, p), upstream)) /
          (2.0 * step);
      CHECK(std::abs(grad[i] - fd) <= 1e-5 * (1.0 + std::abs(fd)));
    }
  }
}

TEST_CASE("polykernel_exact equals outer-product inner product") {
  Rng rng(67);
  const std::size_t n = 6;
  const auto x = random_vec(rng, n);
  const auto y = random_vec(rng, n);
  double outer = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) outer += (x[i] * x[j]) * (y[i] * y[j]);
  }
  CHECK(polykernel_exact(x, y) == doctest::Approx(outer).epsilon(1e-12));

  CHECK(polykernel_exact({1, 0}, {0, 1}) == 0.0);
  CHECK(polykernel_exact({1, 0}, {1, 0}) == 1.0);
}

TEST_CASE("random maclaurin estimates the same kernel") {
  Rng rng(71);
  const std::size_t c = 32, d = 256;
  const std::size_t draws = 50;
  const int pairs = 10;
  int ok = 0;
  for (int pair = 0; pair < pairs; ++pair) {
    const auto x = random_unit(rng, c);
    const auto y = random_unit(rng, c);
    const double exact = polykernel_exact(x, y);
    std::vector<double> est(draws);
    for (std::size_t t = 0; t < draws; ++t) {
      const auto p = make_rm_params(c, d, 500 + 100 * pair + t);
      est[t] = dot(random_maclaurin(x, p), random_maclaurin(y, p));
    }
    const double mean = std::accumulate(est.begin(), est.end(), 0.0) / draws;
    double var = 0.0;
    for (double e : est) var += (e - mean) * (e - mean);
    var /= (draws - 1);
    const double se = std::sqrt(var / draws);
    if (std::abs(mean - exact) <= 2.0 * se + 1e-12) ++ok;
  }
  CHECK(ok >= pairs - 2);  // 2 SE covers ~95% per pair

  const auto p0 = make_rm_params(c, d, 1);
  const auto zero = random_maclaurin(std::vector<double>(c, 0.0), p0);
  for (double v : zero) CHECK(v == 0.0);
}

TEST_CASE("sketch parameter block round-trips and validates") {
  const auto p = make_sketch_params(16, 32, 77);
  std::stringstream buf;
  write_sketch_params(buf, p);
  const auto back = read_sketch_params(buf);
  CHECK(back.seed == p.seed);
  CHECK(back.cs1.h == p.cs1.h);
  CHECK(back.cs2.s == p.cs2.s);

  // Tamper with one hash entry; loader must reject the seed mismatch.
  std::stringstream buf2;
  auto tampered = p;
  tampered.cs1.h[0] = (tampered.cs1.h[0] + 1) % 32;
  write_sketch_params(buf2, tampered);
  CHECK_THROWS_AS(read_sketch_params(buf2), DataError);
}
