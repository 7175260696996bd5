#include "octquant/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include "octquant/fft.hpp"
#include "octquant/parallel.hpp"

namespace octquant {

namespace {

using fft::cplx;

// Estimates within this distance of an integer step snap to it; keeps
// integer motion recovery exact while bounding the subpixel error well
// below the 0.25 px acceptance budget.
constexpr double kSnapPx = 0.1;
constexpr double kSnapDeg = 0.05;

double snap(double v, double delta) {
  const double r = std::round(v);
  return std::abs(v - r) < delta ? r : v;
}

double parabolic_offset(double cm1, double c0, double cp1) {
  const double denom = cm1 - 2.0 * c0 + cp1;
  if (std::abs(denom) < 1e-300) return 0.0;
  const double off = 0.5 * (cm1 - cp1) / denom;
  return std::clamp(off, -0.5, 0.5);
}

// Peak of a circular correlation signal restricted to lags in
// [-max_lag, max_lag]; returns the signed subpixel lag.
struct PeakResult {
  double lag = 0.0;
  bool flat = false;
};

PeakResult find_peak(std::span<const double> corr, long max_lag) {
  const long n = static_cast<long>(corr.size());
  max_lag = std::min(max_lag, n / 2);

  double best = -std::numeric_limits<double>::infinity();
  long best_lag = 0;
  double sum = 0.0;
  long count = 0;
  for (long lag = -max_lag; lag <= max_lag; ++lag) {
    const double v = corr[static_cast<std::size_t>((lag + n) % n)];
    sum += v;
    ++count;
    if (v > best) {
      best = v;
      best_lag = lag;
    }
  }
  // A peak indistinguishable from the background (constant correlation:
  // featureless input) carries no shift information.
  const double mean = sum / static_cast<double>(count);
  if (!std::isfinite(best) ||
      !(best - mean > 1e-9 * (std::abs(best) + 1e-12)))
    return {0.0, true};

  const double cm1 = corr[static_cast<std::size_t>((best_lag - 1 + n) % n)];
  const double cp1 = corr[static_cast<std::size_t>((best_lag + 1 + n) % n)];
  return {static_cast<double>(best_lag) + parabolic_offset(cm1, best, cp1),
          false};
}

void fft2(std::vector<cplx>& data, std::size_t rows, std::size_t cols,
          bool invert) {
  std::vector<cplx> line(std::max(rows, cols));
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<cplx> row(data.data() + r * cols, cols);
    if (invert)
      fft::inverse(row);
    else
      fft::forward(row);
  }
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) line[r] = data[r * cols + c];
    std::span<cplx> col(line.data(), rows);
    if (invert)
      fft::inverse(col);
    else
      fft::forward(col);
    for (std::size_t r = 0; r < rows; ++r) data[r * cols + c] = line[r];
  }
}

double bilinear_sample_f(std::span<const float> img, std::size_t rows,
                         std::size_t cols, double r, double c) {
  const long r0 = static_cast<long>(std::floor(r));
  const long c0 = static_cast<long>(std::floor(c));
  const double fr = r - static_cast<double>(r0);
  const double fc = c - static_cast<double>(c0);
  auto pix = [&](long rr, long cc) -> double {
    if (rr < 0 || cc < 0 || rr >= static_cast<long>(rows) ||
        cc >= static_cast<long>(cols))
      return 0.0;
    return img[static_cast<std::size_t>(rr) * cols +
               static_cast<std::size_t>(cc)];
  };
  return (1.0 - fr) * ((1.0 - fc) * pix(r0, c0) + fc * pix(r0, c0 + 1)) +
         fr * ((1.0 - fc) * pix(r0 + 1, c0) + fc * pix(r0 + 1, c0 + 1));
}

std::uint8_t nearest_sample_u8(std::span<const std::uint8_t> img,
                               std::size_t rows, std::size_t cols, double r,
                               double c, std::uint8_t fill) {
  const long rr = static_cast<long>(std::lround(r));
  const long cc = static_cast<long>(std::lround(c));
  if (rr < 0 || cc < 0 || rr >= static_cast<long>(rows) ||
      cc >= static_cast<long>(cols))
    return fill;
  return img[static_cast<std::size_t>(rr) * cols +
             static_cast<std::size_t>(cc)];
}

}  // namespace

// ---------------------------------------------------------------------------
// Resampling primitives
// ---------------------------------------------------------------------------

std::vector<float> shift_plane(std::span<const float> plane, std::size_t rows,
                               std::size_t cols, double dr, double dc) {
  std::vector<float> out(plane.size(), 0.0f);
  const bool integral = dr == std::floor(dr) && dc == std::floor(dc);
  if (integral) {
    const long idr = static_cast<long>(dr), idc = static_cast<long>(dc);
    for (long r = 0; r < static_cast<long>(rows); ++r) {
      const long sr = r - idr;
      if (sr < 0 || sr >= static_cast<long>(rows)) continue;
      for (long c = 0; c < static_cast<long>(cols); ++c) {
        const long sc = c - idc;
        if (sc < 0 || sc >= static_cast<long>(cols)) continue;
        out[r * cols + c] = plane[sr * cols + sc];
      }
    }
    return out;
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = static_cast<float>(std::clamp(
          bilinear_sample_f(plane, rows, cols, double(r) - dr, double(c) - dc),
          0.0, 1.0));
  return out;
}

std::vector<std::uint8_t> shift_plane_nearest(
    std::span<const std::uint8_t> plane, std::size_t rows, std::size_t cols,
    double dr, double dc) {
  std::vector<std::uint8_t> out(plane.size(), 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = nearest_sample_u8(plane, rows, cols,
                                            double(r) - dr, double(c) - dc, 0);
  return out;
}

std::vector<float> rotate_plane(std::span<const float> plane, std::size_t rows,
                                std::size_t cols, double deg) {
  if (deg == 0.0) return {plane.begin(), plane.end()};
  std::vector<float> out(plane.size(), 0.0f);
  const double rad = deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double rc = (static_cast<double>(rows) - 1.0) / 2.0;
  const double cc = (static_cast<double>(cols) - 1.0) / 2.0;
  // Content rotates by +deg: sample from the -deg rotated position.
  for (std::size_t r = 0; r < rows; ++r) {
    const double dz = static_cast<double>(r) - rc;
    for (std::size_t c = 0; c < cols; ++c) {
      const double dx = static_cast<double>(c) - cc;
      const double sx = cs * dx + sn * dz;
      const double sz = -sn * dx + cs * dz;
      out[r * cols + c] = static_cast<float>(std::clamp(
          bilinear_sample_f(plane, rows, cols, rc + sz, cc + sx), 0.0, 1.0));
    }
  }
  return out;
}

std::vector<std::uint8_t> rotate_plane_nearest(
    std::span<const std::uint8_t> plane, std::size_t rows, std::size_t cols,
    double deg) {
  if (deg == 0.0) return {plane.begin(), plane.end()};
  std::vector<std::uint8_t> out(plane.size(), 0);
  const double rad = deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double rc = (static_cast<double>(rows) - 1.0) / 2.0;
  const double cc = (static_cast<double>(cols) - 1.0) / 2.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double dz = static_cast<double>(r) - rc;
    for (std::size_t c = 0; c < cols; ++c) {
      const double dx = static_cast<double>(c) - cc;
      const double sx = cs * dx + sn * dz;
      const double sz = -sn * dx + cs * dz;
      out[r * cols + c] =
          nearest_sample_u8(plane, rows, cols, rc + sz, cc + sx, 0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// axial_center
// ---------------------------------------------------------------------------

AxialCenterResult axial_center(const Volume3D& volume) {
  const Dims dims = volume.dims();
  const std::size_t plane_size = dims.depth * dims.ascans;
  std::vector<float> out(volume.voxels().size(), 0.0f);
  std::vector<long> offsets(dims.bscans, 0);

  parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
    std::vector<float> sorted(plane_size);
    for (std::size_t b = begin; b < end; ++b) {
      const auto plane = volume.bscan(b);
      std::copy(plane.begin(), plane.end(), sorted.begin());
      // 20th percentile by nearest rank.
      const std::size_t idx =
          static_cast<std::size_t>(0.2 * double(plane_size - 1));
      std::nth_element(sorted.begin(), sorted.begin() + idx, sorted.end());
      const float threshold = sorted[idx];

      double z_sum = 0.0;
      std::size_t count = 0;
      for (std::size_t z = 0; z < dims.depth; ++z)
        for (std::size_t x = 0; x < dims.ascans; ++x)
          if (plane[z * dims.ascans + x] > threshold) {
            z_sum += static_cast<double>(z);
            ++count;
          }
      if (count == 0)
        fail(ErrorCode::DegenerateBScan,
             "B-scan " + std::to_string(b) +
                 " has no voxels above its 20th percentile");

      const double center = z_sum / static_cast<double>(count);
      const long offset =
          std::lround(static_cast<double>(dims.depth) / 2.0 - center);
      offsets[b] = offset;

      float* dst = out.data() + b * plane_size;
      for (long z = 0; z < static_cast<long>(dims.depth); ++z) {
        const long src = z - offset;
        if (src < 0 || src >= static_cast<long>(dims.depth)) continue;
        std::copy(plane.begin() + src * dims.ascans,
                  plane.begin() + (src + 1) * dims.ascans,
                  dst + z * dims.ascans);
      }
    }
  });

  return {Volume3D(dims, volume.spacing(), volume.laterality(),
                   std::move(out), volume.field_of_view_mm()),
          std::move(offsets)};
}

// ---------------------------------------------------------------------------
// bv_smooth (ROF via Chambolle's dual projection, 3D)
// ---------------------------------------------------------------------------

double discrete_total_variation(const Volume3D& volume) {
  const Dims d = volume.dims();
  const auto v = volume.voxels();
  const std::size_t sb = d.depth * d.ascans, sz = d.ascans;
  return pairwise_sum(v.size(), [&](std::size_t i) {
    const std::size_t b = i / sb;
    const std::size_t rem = i % sb;
    const std::size_t z = rem / sz;
    const std::size_t x = rem % sz;
    const double gb = b + 1 < d.bscans ? double(v[i + sb]) - v[i] : 0.0;
    const double gz = z + 1 < d.depth ? double(v[i + sz]) - v[i] : 0.0;
    const double gx = x + 1 < d.ascans ? double(v[i + 1]) - v[i] : 0.0;
    return std::sqrt(gb * gb + gz * gz + gx * gx);
  });
}

Volume3D bv_smooth(const Volume3D& volume, const BvParams& params) {
  if (!(params.lambda >= 0.0) || !std::isfinite(params.lambda))
    fail(ErrorCode::InvalidValue, "lambda must be >= 0");
  if (params.max_iters < 1)
    fail(ErrorCode::InvalidValue, "max_iters must be >= 1");
  if (!(params.tol > 0.0))
    fail(ErrorCode::InvalidValue, "tol must be > 0");

  if (params.lambda == 0.0) return volume;  // exact identity

  const Dims d = volume.dims();
  const std::size_t n = d.total();
  const std::size_t sb = d.depth * d.ascans, sz = d.ascans;
  const double lambda = params.lambda;
  const double tau = 1.0 / 12.0;  // dual step bound for the 3D operator

  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = volume.voxels()[i];

  std::vector<double> pb(n, 0.0), pz(n, 0.0), px(n, 0.0);
  std::vector<double> s(n, 0.0);
  std::vector<double> u(f), u_prev(n, 0.0);

  const double f_norm = std::sqrt(pairwise_sum(
      n, [&](std::size_t i) { return f[i] * f[i]; }));
  const double norm_floor = std::max(f_norm, 1e-12);

  auto decompose = [&](std::size_t i, std::size_t& b, std::size_t& z,
                       std::size_t& x) {
    b = i / sb;
    const std::size_t rem = i % sb;
    z = rem / sz;
    x = rem % sz;
  };

  for (std::size_t iter = 0; iter < params.max_iters; ++iter) {
    // s = div p - f / lambda  (backward-difference divergence)
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        std::size_t b, z, x;
        decompose(i, b, z, x);
        double div = pb[i] + pz[i] + px[i];
        if (b > 0) div -= pb[i - sb];
        if (z > 0) div -= pz[i - sz];
        if (x > 0) div -= px[i - 1];
        s[i] = div - f[i] / lambda;
      }
    });

    // p <- (p + tau * grad s) / (1 + tau * |grad s|)
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        std::size_t b, z, x;
        decompose(i, b, z, x);
        const double gb = b + 1 < d.bscans ? s[i + sb] - s[i] : 0.0;
        const double gz = z + 1 < d.depth ? s[i + sz] - s[i] : 0.0;
        const double gx = x + 1 < d.ascans ? s[i + 1] - s[i] : 0.0;
        const double mag = std::sqrt(gb * gb + gz * gz + gx * gx);
        const double denom = 1.0 + tau * mag;
        pb[i] = (pb[i] + tau * gb) / denom;
        pz[i] = (pz[i] + tau * gz) / denom;
        px[i] = (px[i] + tau * gx) / denom;
      }
    });

    // u = f - lambda * div p
    std::swap(u, u_prev);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        std::size_t b, z, x;
        decompose(i, b, z, x);
        double div = pb[i] + pz[i] + px[i];
        if (b > 0) div -= pb[i - sb];
        if (z > 0) div -= pz[i - sz];
        if (x > 0) div -= px[i - 1];
        u[i] = f[i] - lambda * div;
      }
    });

    const double change = std::sqrt(pairwise_sum(n, [&](std::size_t i) {
      const double du = u[i] - u_prev[i];
      return du * du;
    }));
    if (change / norm_floor < params.tol) break;
  }

  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<float>(std::clamp(u[i], 0.0, 1.0));
  return Volume3D(d, volume.spacing(), volume.laterality(), std::move(out),
                  volume.field_of_view_mm());
}

// ---------------------------------------------------------------------------
// Motion estimation
// ---------------------------------------------------------------------------

namespace {

// Pooled 1D circular cross-correlation along one axis: for axis_is_rows,
// corr(lag) pools over columns sum_z scan[(z+lag) mod Z, x] * ref[z, x];
// otherwise over rows along the lateral axis.
ShiftEstimate pooled_axis_shift(std::span<const float> scan,
                                std::span<const double> ref, std::size_t rows,
                                std::size_t cols, bool axis_is_rows) {
  const std::size_t n = axis_is_rows ? rows : cols;
  const std::size_t lines = axis_is_rows ? cols : rows;
  std::vector<cplx> acc(n, cplx(0.0, 0.0));
  std::vector<cplx> fa(n), fb(n);
  for (std::size_t line = 0; line < lines; ++line) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx =
          axis_is_rows ? i * cols + line : line * cols + i;
      fa[i] = cplx(scan[idx], 0.0);
      fb[i] = cplx(ref[idx], 0.0);
    }
    fft::forward(fa);
    fft::forward(fb);
    for (std::size_t i = 0; i < n; ++i) acc[i] += fa[i] * std::conj(fb[i]);
  }
  fft::inverse(acc);
  std::vector<double> corr(n);
  for (std::size_t i = 0; i < n; ++i) corr[i] = acc[i].real();

  const PeakResult peak = find_peak(corr, static_cast<long>(n) / 2 - 1);
  if (peak.flat) return {0.0, true};
  return {snap(peak.lag, kSnapPx), false};
}

}  // namespace

ShiftEstimate estimate_axial_shift(std::span<const float> scan,
                                   std::span<const double> ref,
                                   std::size_t rows, std::size_t cols) {
  return pooled_axis_shift(scan, ref, rows, cols, true);
}

ShiftEstimate estimate_lateral_shift(std::span<const float> scan,
                                     std::span<const double> ref,
                                     std::size_t rows, std::size_t cols) {
  return pooled_axis_shift(scan, ref, rows, cols, false);
}

PlaneShift estimate_plane_shift(std::span<const float> a,
                                std::span<const float> b, std::size_t rows,
                                std::size_t cols) {
  const std::size_t n = rows * cols;
  std::vector<cplx> fa(n), fb(n);
  for (std::size_t i = 0; i < n; ++i) {
    fa[i] = cplx(a[i], 0.0);
    fb[i] = cplx(b[i], 0.0);
  }
  fft2(fa, rows, cols, false);
  fft2(fb, rows, cols, false);

  std::size_t live_bins = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const cplx cross = fa[i] * std::conj(fb[i]);
    const double mag = std::abs(cross);
    if (mag > 1e-12) {
      fa[i] = cross / mag;
      ++live_bins;
    } else {
      fa[i] = cplx(0.0, 0.0);
    }
  }
  // A nearly empty cross-power spectrum (constant planes) carries no shift
  // information.
  if (live_bins < std::max<std::size_t>(n / 100, 2)) return {0.0, 0.0, true};

  fft2(fa, rows, cols, true);

  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = fa[i].real();
    if (v > best) {
      best = v;
      best_i = i;
    }
  }
  if (!(best > 0.0)) return {0.0, 0.0, true};

  const long pr = static_cast<long>(best_i / cols);
  const long pc = static_cast<long>(best_i % cols);
  auto wrap = [](long v, long size) { return (v % size + size) % size; };
  auto at = [&](long r, long c) {
    return fa[static_cast<std::size_t>(wrap(r, long(rows))) * cols +
              static_cast<std::size_t>(wrap(c, long(cols)))]
        .real();
  };

  double dr = static_cast<double>(pr) +
              parabolic_offset(at(pr - 1, pc), best, at(pr + 1, pc));
  double dc = static_cast<double>(pc) +
              parabolic_offset(at(pr, pc - 1), best, at(pr, pc + 1));
  if (dr > static_cast<double>(rows) / 2.0) dr -= static_cast<double>(rows);
  if (dc > static_cast<double>(cols) / 2.0) dc -= static_cast<double>(cols);
  return {snap(dr, kSnapPx), snap(dc, kSnapPx), false};
}

namespace {

// Polar resampling about the plane centre; rows of the output walk the
// angle axis so a rotation becomes a circular shift along it.
constexpr std::size_t kThetaBins = 720;

std::vector<double> polar_rings_f(std::span<const float> img,
                                  std::size_t rows, std::size_t cols,
                                  std::size_t n_r) {
  const double rc = (static_cast<double>(rows) - 1.0) / 2.0;
  const double cc = (static_cast<double>(cols) - 1.0) / 2.0;
  const double r_max = 0.45 * static_cast<double>(std::min(rows, cols));
  std::vector<double> polar(kThetaBins * n_r);
  for (std::size_t t = 0; t < kThetaBins; ++t) {
    const double theta =
        2.0 * std::numbers::pi * static_cast<double>(t) / kThetaBins;
    const double st = std::sin(theta), ct = std::cos(theta);
    for (std::size_t j = 0; j < n_r; ++j) {
      const double radius =
          (static_cast<double>(j) + 0.5) * r_max / static_cast<double>(n_r);
      polar[t * n_r + j] =
          bilinear_sample_f(img, rows, cols, rc + radius * st,
                            cc + radius * ct);
    }
  }
  return polar;
}

}  // namespace

ShiftEstimate estimate_rotation_deg(std::span<const float> scan,
                                    std::span<const double> ref,
                                    std::size_t rows, std::size_t cols) {
  const std::size_t n_r = std::min<std::size_t>(std::min(rows, cols) / 2, 192);
  std::vector<float> ref_f(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    ref_f[i] = static_cast<float>(ref[i]);

  const auto polar_scan = polar_rings_f(scan, rows, cols, n_r);
  const auto polar_ref = polar_rings_f(ref_f, rows, cols, n_r);

  // Correlate along the angle axis, pooled over radii.
  std::vector<cplx> acc(kThetaBins, cplx(0.0, 0.0));
  std::vector<cplx> fa(kThetaBins), fb(kThetaBins);
  for (std::size_t j = 0; j < n_r; ++j) {
    for (std::size_t t = 0; t < kThetaBins; ++t) {
      fa[t] = cplx(polar_scan[t * n_r + j], 0.0);
      fb[t] = cplx(polar_ref[t * n_r + j], 0.0);
    }
    fft::forward(fa);
    fft::forward(fb);
    for (std::size_t t = 0; t < kThetaBins; ++t)
      acc[t] += fa[t] * std::conj(fb[t]);
  }
  fft::inverse(acc);
  std::vector<double> corr(kThetaBins);
  for (std::size_t t = 0; t < kThetaBins; ++t) corr[t] = acc[t].real();

  // Restrict to |angle| < 45 deg; rotations beyond that are out of contract.
  const long max_lag = static_cast<long>(kThetaBins) * 45 / 360 - 1;
  const PeakResult peak = find_peak(corr, max_lag);
  if (peak.flat) return {0.0, true};
  const double deg = peak.lag * 360.0 / static_cast<double>(kThetaBins);
  return {snap(deg, kSnapDeg), false};
}

// ---------------------------------------------------------------------------
// motion_correct
// ---------------------------------------------------------------------------

namespace {

std::vector<double> make_reference(const std::vector<float>& voxels,
                                   const Dims& dims, std::size_t window) {
  const std::size_t plane = dims.depth * dims.ascans;
  const std::size_t mid = dims.bscans / 2;
  const std::size_t lo = mid >= window ? mid - window : 0;
  const std::size_t hi = std::min(dims.bscans - 1, mid + window);
  std::vector<double> ref(plane, 0.0);
  for (std::size_t b = lo; b <= hi; ++b)
    for (std::size_t i = 0; i < plane; ++i)
      ref[i] += voxels[b * plane + i];
  const double scale = 1.0 / static_cast<double>(hi - lo + 1);
  for (double& v : ref) v *= scale;
  return ref;
}

// Lower median: keeps an all-integer chain anchored on an integer.
double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

}  // namespace

MotionCorrectResult motion_correct(const Volume3D& volume,
                                   std::size_t reference_window) {
  const Dims dims = volume.dims();
  if (dims.bscans < 3)
    fail(ErrorCode::InvalidValue, "motion correction needs at least 3 B-scans");
  const std::size_t plane = dims.depth * dims.ascans;

  std::vector<float> voxels(volume.voxels().begin(), volume.voxels().end());
  MotionEstimate est;
  est.reference_window = reference_window;
  est.axial_shift_px.assign(dims.bscans, 0.0);
  est.lateral_shift_px.assign(dims.bscans, 0.0);
  est.rotation_deg.assign(dims.bscans, 0.0);
  est.flat_flags.assign(dims.bscans, 0);

  auto plane_span = [&](std::size_t b) {
    return std::span<const float>(voxels.data() + b * plane, plane);
  };

  // Axial: each B-scan against the moving average of the central B-scan
  // neighbourhood; the stored value is the correction applied.
  {
    const auto ref = make_reference(voxels, dims, reference_window);
    parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        const ShiftEstimate e =
            estimate_axial_shift(plane_span(b), ref, dims.depth, dims.ascans);
        est.axial_shift_px[b] = e.flat ? 0.0 : -e.value;
        if (e.flat) est.flat_flags[b] = 1;
      }
    });
    parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        if (est.axial_shift_px[b] == 0.0) continue;
        const auto shifted = shift_plane(plane_span(b), dims.depth,
                                         dims.ascans, est.axial_shift_px[b],
                                         0.0);
        std::copy(shifted.begin(), shifted.end(), voxels.begin() + b * plane);
      }
    });
  }

  // Lateral: relative shifts between adjacent B-scans, accumulated and
  // re-centred on the median so a single outlying scan corrects alone.
  // A B-scan whose content breaks the pure-translation model (a rotated
  // scan, say) poisons every chain link that crosses it; large chain
  // corrections are therefore vetoed unless the direct reference estimate
  // corroborates them.
  {
    std::vector<double> relative(dims.bscans, 0.0);
    parallel_for(dims.bscans - 1, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t b = i + 1;
        const PlaneShift e = estimate_plane_shift(
            plane_span(b), plane_span(b - 1), dims.depth, dims.ascans);
        relative[b] = e.flat ? 0.0 : e.dx;
        if (e.flat) est.flat_flags[b] = 1;
      }
    });
    std::vector<double> absolute(dims.bscans, 0.0);
    for (std::size_t b = 1; b < dims.bscans; ++b)
      absolute[b] = absolute[b - 1] + relative[b];
    const double anchor = median_of(absolute);
    for (std::size_t b = 0; b < dims.bscans; ++b)
      est.lateral_shift_px[b] = -(absolute[b] - anchor);

    const auto ref = make_reference(voxels, dims, reference_window);
    parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        if (std::abs(est.lateral_shift_px[b]) <= 2.0) continue;
        const ShiftEstimate direct = estimate_lateral_shift(
            plane_span(b), ref, dims.depth, dims.ascans);
        const double corroborated = direct.flat ? 0.0 : -direct.value;
        if (std::abs(est.lateral_shift_px[b] - corroborated) > 1.0) {
          est.lateral_shift_px[b] = corroborated;
          est.flat_flags[b] = 1;
        }
      }
    });

    parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        if (est.lateral_shift_px[b] == 0.0) continue;
        const auto shifted = shift_plane(plane_span(b), dims.depth,
                                         dims.ascans, 0.0,
                                         est.lateral_shift_px[b]);
        std::copy(shifted.begin(), shifted.end(), voxels.begin() + b * plane);
      }
    });
  }

  // Rotation: polar phase correlation against the refreshed reference.
  {
    const auto ref = make_reference(voxels, dims, reference_window);
    parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        const ShiftEstimate e = estimate_rotation_deg(plane_span(b), ref,
                                                      dims.depth, dims.ascans);
        est.rotation_deg[b] = e.flat ? 0.0 : -e.value;
        if (e.flat) est.flat_flags[b] = 1;
      }
    });
    parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        if (est.rotation_deg[b] == 0.0) continue;
        const auto rotated = rotate_plane(plane_span(b), dims.depth,
                                          dims.ascans, est.rotation_deg[b]);
        std::copy(rotated.begin(), rotated.end(), voxels.begin() + b * plane);
      }
    });
  }

  return {Volume3D(dims, volume.spacing(), volume.laterality(),
                   std::move(voxels), volume.field_of_view_mm()),
          std::move(est)};
}

}  // namespace octquant
