#pragma once

// Minimal complex FFT used by the motion-correction estimators. Radix-2 for
// power-of-two lengths, Bluestein's chirp-z transform otherwise, so any
// B-scan geometry works without padding decisions leaking into callers.

#include <complex>
#include <span>
#include <vector>

namespace octquant::fft {

using cplx = std::complex<double>;

/// In-place forward DFT, any length >= 1.
void forward(std::span<cplx> data);

/// In-place inverse DFT including the 1/n scale.
void inverse(std::span<cplx> data);

/// Circular cross-correlation of two equal-length real sequences:
/// out[lag] = sum_i a[(i + lag) mod n] * b[i].
std::vector<double> circular_cross_correlation(std::span<const double> a,
                                               std::span<const double> b);

}  // namespace octquant::fft
