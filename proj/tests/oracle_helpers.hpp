#pragma once

// Independent brute-force oracles shared by the test suites. Everything here
// recomputes results from first principles, deliberately avoiding the
// library's fast paths.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "octquant/core.hpp"
#include "octquant/kdtree.hpp"
#include "octquant/rng.hpp"

namespace oracle {

using namespace octquant;

// All-pairs nearest squared distance in a plane: for every nonzero pixel of
// `from`, the minimum squared distance to any nonzero pixel of `to`
// (infinity when `to` is empty).
inline std::vector<double> brute_nearest_sq(
    const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to,
    std::size_t rows, std::size_t cols) {
  std::vector<std::pair<long, long>> targets;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (to[r * cols + c]) targets.emplace_back(long(r), long(c));

  std::vector<double> out(rows * cols,
                          std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (!from[r * cols + c]) continue;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [tr, tc] : targets) {
        const double dr = double(long(r) - tr);
        const double dc = double(long(c) - tc);
        best = std::min(best, dr * dr + dc * dc);
      }
      out[r * cols + c] = best;
    }
  return out;
}

// Boundary definition replicated from first principles: class pixels
// 4-adjacent to another class or on the border.
inline std::vector<std::uint8_t> brute_boundary(
    const std::vector<std::uint8_t>& plane, std::size_t rows,
    std::size_t cols, int class_id) {
  std::vector<std::uint8_t> out(rows * cols, 0);
  for (long r = 0; r < long(rows); ++r)
    for (long c = 0; c < long(cols); ++c) {
      if (plane[r * cols + c] != class_id) continue;
      bool boundary = r == 0 || c == 0 || r == long(rows) - 1 ||
                      c == long(cols) - 1;
      const long dr[4] = {-1, 1, 0, 0};
      const long dc[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4 && !boundary; ++k) {
        const long rr = r + dr[k], cc = c + dc[k];
        if (rr >= 0 && cc >= 0 && rr < long(rows) && cc < long(cols) &&
            plane[rr * cols + cc] != class_id)
          boundary = true;
      }
      if (boundary) out[r * cols + c] = 1;
    }
  return out;
}

// Volume-level NSD by brute force (per-B-scan boundaries, all-pairs
// distances, volume pooling, presence special cases).
inline double brute_nsd(const LabelMask& gt, const LabelMask& pred,
                        int class_id, double tau) {
  const Dims d = gt.dims();
  bool gt_present = false, pred_present = false;
  for (auto v : gt.labels()) gt_present |= v == class_id;
  for (auto v : pred.labels()) pred_present |= v == class_id;
  if (!gt_present && !pred_present) return 1.0;
  if (gt_present != pred_present) return 0.0;

  const double tau_sq = tau * tau;
  std::uint64_t within = 0, total = 0;
  for (std::size_t b = 0; b < d.bscans; ++b) {
    std::vector<std::uint8_t> gt_plane(gt.bscan(b).begin(),
                                       gt.bscan(b).end());
    std::vector<std::uint8_t> pred_plane(pred.bscan(b).begin(),
                                         pred.bscan(b).end());
    const auto gt_sites = brute_boundary(gt_plane, d.depth, d.ascans,
                                         class_id);
    const auto pred_sites = brute_boundary(pred_plane, d.depth, d.ascans,
                                           class_id);
    const auto d_pred =
        brute_nearest_sq(pred_sites, gt_sites, d.depth, d.ascans);
    const auto d_gt =
        brute_nearest_sq(gt_sites, pred_sites, d.depth, d.ascans);
    for (std::size_t i = 0; i < gt_sites.size(); ++i) {
      if (pred_sites[i]) {
        ++total;
        if (d_pred[i] <= tau_sq) ++within;
      }
      if (gt_sites[i]) {
        ++total;
        if (d_gt[i] <= tau_sq) ++within;
      }
    }
  }
  return double(within) / double(total);
}

// O(n^2) nearest-point search over 3D point sets.
inline double brute_nearest_distance(const Point3& q,
                                     const std::vector<Point3>& points) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : points) best = std::min(best, squared_distance(q, p));
  return std::sqrt(best);
}

// Direct 3x3 convolution evaluated where the window fits (the one-pixel
// output border is zero, matching the documented gradient convention).
inline std::vector<double> brute_convolve3(const std::vector<float>& img,
                                           std::size_t rows, std::size_t cols,
                                           const double kernel[3][3]) {
  std::vector<double> out(rows * cols, 0.0);
  for (long r = 1; r + 1 < long(rows); ++r)
    for (long c = 1; c + 1 < long(cols); ++c) {
      double acc = 0.0;
      for (int kr = -1; kr <= 1; ++kr)
        for (int kc = -1; kc <= 1; ++kc)
          acc += kernel[kr + 1][kc + 1] * img[(r + kr) * cols + (c + kc)];
      out[r * cols + c] = acc;
    }
  return out;
}

// Random layered mask pair: plausible retina-like columns so boundary sets
// stay small enough for the all-pairs oracle.
struct MaskPair {
  LabelMask gt;
  LabelMask pred;
};

inline LabelMask random_layered_mask(Dims dims, const VoxelSpacing& spacing,
                                     Rng& rng, int jitter_px) {
  std::vector<std::uint8_t> labels(dims.total(), label::kVitreous);
  // Random band boundaries shared across the volume, jittered per column.
  const int classes[5] = {label::kRnfl, label::kOnlIs, label::kRpe,
                          label::kFluid, label::kChoroid};
  const std::size_t z0 = 2 + rng.below(dims.depth / 4);
  const std::size_t band = std::max<std::size_t>(2, dims.depth / 8);
  for (std::size_t b = 0; b < dims.bscans; ++b)
    for (std::size_t x = 0; x < dims.ascans; ++x) {
      long z = long(z0) + long(rng.below(2 * jitter_px + 1)) - jitter_px;
      for (int ci = 0; ci < 5; ++ci) {
        const long z_end = z + long(band) +
                           long(rng.below(2 * jitter_px + 1)) - jitter_px;
        for (long zz = std::max(0L, z);
             zz < std::min(z_end, long(dims.depth)); ++zz)
          labels[(b * dims.depth + std::size_t(zz)) * dims.ascans + x] =
              std::uint8_t(classes[ci]);
        z = z_end;
      }
      for (long zz = std::max(0L, z); zz < long(dims.depth); ++zz)
        labels[(b * dims.depth + std::size_t(zz)) * dims.ascans + x] =
            label::kChoroid;
    }
  return LabelMask(dims, spacing, Laterality::OD, std::move(labels));
}

inline MaskPair random_mask_pair(std::uint64_t seed, Dims dims) {
  Rng rng(seed);
  const VoxelSpacing spacing{2.0, 12.0, 17.0};
  LabelMask gt = random_layered_mask(dims, spacing, rng, 1);
  LabelMask pred = random_layered_mask(dims, spacing, rng, 2);
  return {std::move(gt), std::move(pred)};
}

}  // namespace oracle
