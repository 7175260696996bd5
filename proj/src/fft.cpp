#include "octquant/fft.hpp"

#include <cmath>
#include <numbers>

namespace octquant::fft {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 Cooley-Tukey; n must be a power of two.
void radix2(std::span<cplx> a, bool invert) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang =
        (invert ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
    const cplx wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (invert) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= scale;
  }
}

// Bluestein chirp-z transform for arbitrary n, built on radix2.
void bluestein(std::span<cplx> a, bool invert) {
  const std::size_t n = a.size();
  const std::size_t m = next_pow2(2 * n - 1);
  const double sign = invert ? 1.0 : -1.0;

  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for large n.
    const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    const double ang =
        sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = cplx(std::cos(ang), std::sin(ang));
  }

  std::vector<cplx> u(m, cplx(0.0, 0.0));
  std::vector<cplx> v(m, cplx(0.0, 0.0));
  for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
  v[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k)
    v[k] = v[m - k] = std::conj(chirp[k]);

  radix2(u, false);
  radix2(v, false);
  for (std::size_t k = 0; k < m; ++k) u[k] *= v[k];
  radix2(u, true);

  for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * chirp[k];
  if (invert) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= scale;
  }
}

void transform(std::span<cplx> data, bool invert) {
  if (data.size() <= 1) return;
  if (is_pow2(data.size()))
    radix2(data, invert);
  else
    bluestein(data, invert);
}

}  // namespace

void forward(std::span<cplx> data) { transform(data, false); }

void inverse(std::span<cplx> data) { transform(data, true); }

std::vector<double> circular_cross_correlation(std::span<const double> a,
                                               std::span<const double> b) {
  const std::size_t n = a.size();
  std::vector<cplx> fa(n), fb(n);
  for (std::size_t i = 0; i < n; ++i) {
    fa[i] = cplx(a[i], 0.0);
    fb[i] = cplx(b[i], 0.0);
  }
  forward(fa);
  forward(fb);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= std::conj(fb[i]);
  inverse(fa);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fa[i].real();
  return out;
}

}  // namespace octquant::fft
