#include <cmath>
#include <cstdint>

#include "cbcnn/tensor.hpp"

namespace cbcnn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Forward DFT by Bluestein's chirp-z transform. Handles any length by
// re-expressing the DFT as a circular convolution of power-of-two size.
ComplexVector dft_bluestein(const std::vector<double>& v) {
  const std::size_t n = v.size();
  const std::size_t m = next_pow2(2 * n - 1);

  // chirp[k] = exp(-i*pi*k^2/n); exponent taken mod 2n to keep k^2 small.
  std::vector<double> chirp_re(n), chirp_im(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    const double angle = -kTwoPi * 0.5 * static_cast<double>(k2) / static_cast<double>(n);
    chirp_re[k] = std::cos(angle);
    chirp_im[k] = std::sin(angle);
  }

  std::vector<double> a_re(m, 0.0), a_im(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    a_re[k] = v[k] * chirp_re[k];
    a_im[k] = v[k] * chirp_im[k];
  }

  std::vector<double> b_re(m, 0.0), b_im(m, 0.0);
  b_re[0] = chirp_re[0];
  b_im[0] = -chirp_im[0];
  for (std::size_t k = 1; k < n; ++k) {
    b_re[k] = b_re[m - k] = chirp_re[k];
    b_im[k] = b_im[m - k] = -chirp_im[k];
  }

  fft_pow2(a_re, a_im, false);
  fft_pow2(b_re, b_im, false);
  for (std::size_t k = 0; k < m; ++k) {
    const double re = a_re[k] * b_re[k] - a_im[k] * b_im[k];
    const double im = a_re[k] * b_im[k] + a_im[k] * b_re[k];
    a_re[k] = re;
    a_im[k] = im;
  }
  fft_pow2(a_re, a_im, true);

  ComplexVector out(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.re[k] = a_re[k] * chirp_re[k] - a_im[k] * chirp_im[k];
    out.im[k] = a_re[k] * chirp_im[k] + a_im[k] * chirp_re[k];
  }
  return out;
}

}  // namespace

void fft_pow2(std::vector<double>& re, std::vector<double>& im, bool inverse) {
  const std::size_t n = re.size();
  if (n != im.size() || !is_pow2(n)) throw DimensionError("fft_pow2: bad length");
  if (n == 1) return;

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
    const double wr = std::cos(angle), wi = std::sin(angle);
    for (std::size_t start = 0; start < n; start += len) {
      double cur_r = 1.0, cur_i = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = start + k;
        const std::size_t b = a + len / 2;
        const double tr = re[b] * cur_r - im[b] * cur_i;
        const double ti = re[b] * cur_i + im[b] * cur_r;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double nr = cur_r * wr - cur_i * wi;
        cur_i = cur_r * wi + cur_i * wr;
        cur_r = nr;
      }
    }
  }

  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      re[i] *= inv;
      im[i] *= inv;
    }
  }
}

ComplexVector dft(const std::vector<double>& v) {
  const std::size_t n = v.size();
  if (n == 0) throw DimensionError("dft: empty input");
  if (is_pow2(n)) {
    ComplexVector out(n);
    out.re = v;
    fft_pow2(out.re, out.im, false);
    return out;
  }
  return dft_bluestein(v);
}

std::vector<double> idft(const ComplexVector& f) {
  const std::size_t n = f.size();
  if (n == 0) throw DimensionError("idft: empty input");
  if (is_pow2(n)) {
    std::vector<double> re = f.re, im = f.im;
    fft_pow2(re, im, true);
    return re;
  }
  // idft(f) = conj(dft(conj(f)))/n; split into two real forward transforms.
  ComplexVector fr = dft(f.re);
  ComplexVector fi = dft(f.im);
  std::vector<double> out(n);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = (fr.re[k] + fi.im[k]) * inv;
  }
  return out;
}

std::vector<double> circular_convolve(const std::vector<double>& a,
                                      const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("circular_convolve: length mismatch");
  ComplexVector fa = dft(a);
  ComplexVector fb = dft(b);
  const std::size_t n = a.size();
  ComplexVector prod(n);
  for (std::size_t k = 0; k < n; ++k) {
    prod.re[k] = fa.re[k] * fb.re[k] - fa.im[k] * fb.im[k];
    prod.im[k] = fa.re[k] * fb.im[k] + fa.im[k] * fb.re[k];
  }
  return idft(prod);
}

}  // namespace cbcnn
