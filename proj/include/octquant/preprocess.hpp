#pragma once

// The preprocessing chain: axial retinal centering, 3D bounded-variation
// smoothing (ROF objective, Chambolle dual projection), and inter-B-scan
// motion correction (axial, lateral, rotational) driven by FFT correlation.

#include <cstdint>
#include <span>
#include <vector>

#include "octquant/core.hpp"

namespace octquant {

struct BvParams {
  double lambda = 0.08;        // TV weight; 0 returns the input unchanged
  std::size_t max_iters = 100;
  double tol = 1e-4;           // relative L2 change between iterates
};

/// Per-B-scan corrections applied by motion_correct, in application order:
/// axial, then lateral, then rotation. flat_flags marks B-scans whose
/// estimate needed intervention: a correlation peak indistinguishable from
/// background (shift forced to zero) or a chain correction replaced by the
/// direct reference estimate. Warnings only.
struct MotionEstimate {
  std::vector<double> axial_shift_px;
  std::vector<double> lateral_shift_px;
  std::vector<double> rotation_deg;
  std::vector<std::uint8_t> flat_flags;
  std::size_t reference_window = 5;  // moving-average half-width
};

struct AxialCenterResult {
  Volume3D volume;
  std::vector<long> offsets_px;  // integer roll applied per B-scan
};

/// Rolls each B-scan so that the mean axial position of voxels brighter than
/// the B-scan's 20th intensity percentile lands at depth/2. Constant B-scans
/// leave nothing above the percentile and raise DegenerateBScan.
AxialCenterResult axial_center(const Volume3D& volume);

/// ROF denoise: minimize 0.5*||u - f||² + lambda*TV(u) by Chambolle's dual
/// projection; stops at max_iters or when the relative change drops below
/// tol. Output clamped to [0, 1].
Volume3D bv_smooth(const Volume3D& volume, const BvParams& params = {});

/// Isotropic discrete TV (forward differences, pixel units); test support.
double discrete_total_variation(const Volume3D& volume);

struct MotionCorrectResult {
  Volume3D volume;
  MotionEstimate estimate;
};

/// Axial shifts against the moving average of the central B-scan
/// neighbourhood, lateral shifts by phase correlation of adjacent B-scans,
/// rotations by phase correlation in polar coordinates about the B-scan
/// centre. Corrections are applied axial -> lateral -> rotation with
/// bilinear resampling and zero fill; estimates within 0.1 px (0.05 deg) of
/// an integer step snap to it, so a motion-free volume passes through
/// bit-exactly.
MotionCorrectResult motion_correct(const Volume3D& volume,
                                   std::size_t reference_window = 5);

struct ShiftEstimate {
  double value = 0.0;
  bool flat = false;
};

struct PlaneShift {
  double dz = 0.0;
  double dx = 0.0;
  bool flat = false;
};

// Estimator and resampling primitives, exposed for the property tests and
// reused by the phantom generator so injected motion and applied correction
// share one convention: shift_plane moves content by (+dr, +dc) rows/cols,
// rotate_plane rotates content by +deg about the plane centre.

/// Axial displacement of scan relative to ref (positive = content sits
/// deeper), by FFT cross-correlation along depth pooled over columns.
ShiftEstimate estimate_axial_shift(std::span<const float> scan,
                                   std::span<const double> ref,
                                   std::size_t rows, std::size_t cols);

/// Lateral displacement of scan relative to ref, pooled over depth rows;
/// used to cross-check the adjacent-pair chain.
ShiftEstimate estimate_lateral_shift(std::span<const float> scan,
                                     std::span<const double> ref,
                                     std::size_t rows, std::size_t cols);

/// 2D displacement of a relative to b via DFT phase correlation with
/// parabolic subpixel peak refinement.
PlaneShift estimate_plane_shift(std::span<const float> a,
                                std::span<const float> b, std::size_t rows,
                                std::size_t cols);

/// Rotation of scan relative to ref (degrees) via phase correlation along
/// the angular axis after polar resampling about the plane centre.
ShiftEstimate estimate_rotation_deg(std::span<const float> scan,
                                    std::span<const double> ref,
                                    std::size_t rows, std::size_t cols);

std::vector<float> shift_plane(std::span<const float> plane, std::size_t rows,
                               std::size_t cols, double dr, double dc);
std::vector<std::uint8_t> shift_plane_nearest(
    std::span<const std::uint8_t> plane, std::size_t rows, std::size_t cols,
    double dr, double dc);
std::vector<float> rotate_plane(std::span<const float> plane, std::size_t rows,
                                std::size_t cols, double deg);
std::vector<std::uint8_t> rotate_plane_nearest(
    std::span<const std::uint8_t> plane, std::size_t rows, std::size_t cols,
    double deg);

}  // namespace octquant
