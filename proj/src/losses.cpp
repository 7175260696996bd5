#include "octquant/losses.hpp"

#include <algorithm>
#include <cmath>

#include "octquant/parallel.hpp"

namespace octquant {

namespace {

void check_shapes(std::size_t a, std::size_t b) {
  if (a != b)
    fail(ErrorCode::ShapeMismatch, "plane sizes differ: " + std::to_string(a) +
                                       " vs " + std::to_string(b));
}

void check_masks(const LabelMask& y, const LabelMask& yhat) {
  if (!(y.dims() == yhat.dims()))
    fail(ErrorCode::ShapeMismatch, "mask dims differ: " + to_string(y.dims()) +
                                       " vs " + to_string(yhat.dims()));
}

std::vector<float> one_hot_plane(std::span<const std::uint8_t> labels,
                                 int class_id) {
  std::vector<float> plane(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    plane[i] = labels[i] == class_id ? 1.0f : 0.0f;
  return plane;
}

bool has_class(const LabelMask& mask, int class_id) {
  for (auto v : mask.labels())
    if (v == class_id) return true;
  return false;
}

}  // namespace

double dice_loss_plane(std::span<const float> y, std::span<const float> yhat,
                       double epsilon) {
  check_shapes(y.size(), yhat.size());
  const double cross = pairwise_sum(y.size(), [&](std::size_t i) {
    return static_cast<double>(y[i]) * yhat[i];
  });
  const double y_sq = pairwise_sum(y.size(), [&](std::size_t i) {
    return static_cast<double>(y[i]) * y[i];
  });
  const double yhat_sq = pairwise_sum(y.size(), [&](std::size_t i) {
    return static_cast<double>(yhat[i]) * yhat[i];
  });
  return 1.0 - 2.0 * cross / (y_sq + yhat_sq + epsilon);
}

double ce_loss_plane(std::span<const float> y, std::span<const float> yhat,
                     double clamp_lo, double clamp_hi) {
  check_shapes(y.size(), yhat.size());
  const double total = pairwise_sum(y.size(), [&](std::size_t i) {
    const double p = std::clamp(static_cast<double>(yhat[i]), clamp_lo,
                                clamp_hi);
    const double t = y[i];
    return -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  });
  return total / static_cast<double>(y.size());
}

std::vector<float> sobel_magnitude(std::span<const float> image,
                                   std::size_t rows, std::size_t cols) {
  check_shapes(image.size(), rows * cols);
  // Gradients are evaluated where the full 3x3 window fits; the one-pixel
  // output border carries zero gradient, so constant planes have G == 0
  // everywhere instead of a spurious padding edge.
  std::vector<float> mag(rows * cols, 0.0f);
  if (rows < 3 || cols < 3) return mag;
  auto pix = [&](std::size_t r, std::size_t c) -> double {
    return image[r * cols + c];
  };
  for (std::size_t r = 1; r + 1 < rows; ++r) {
    for (std::size_t c = 1; c + 1 < cols; ++c) {
      const double gx = -pix(r - 1, c - 1) + pix(r - 1, c + 1) -
                        2.0 * pix(r, c - 1) + 2.0 * pix(r, c + 1) -
                        pix(r + 1, c - 1) + pix(r + 1, c + 1);
      const double gy = -pix(r - 1, c - 1) - 2.0 * pix(r - 1, c) -
                        pix(r - 1, c + 1) + pix(r + 1, c - 1) +
                        2.0 * pix(r + 1, c) + pix(r + 1, c + 1);
      mag[r * cols + c] = static_cast<float>(std::sqrt(gx * gx + gy * gy));
    }
  }
  return mag;
}

double texture_loss_plane(std::span<const float> y,
                          std::span<const float> yhat, std::size_t rows,
                          std::size_t cols) {
  check_shapes(y.size(), yhat.size());
  check_shapes(y.size(), rows * cols);
  const auto gy = sobel_magnitude(y, rows, cols);
  const auto gyhat = sobel_magnitude(yhat, rows, cols);
  const double total = pairwise_sum(gy.size(), [&](std::size_t i) {
    return std::abs(static_cast<double>(gy[i]) - gyhat[i]);
  });
  return total / static_cast<double>(gy.size());
}

double dice_loss(const LabelMask& y, const LabelMask& yhat, double epsilon) {
  check_masks(y, yhat);
  // Average over classes present in either mask; an absent-absent class
  // would contribute a spurious 1 through the epsilon term.
  double sum = 0.0;
  std::size_t active = 0;
  for (int c = 0; c < LabelSchema::kNumClasses; ++c) {
    if (!has_class(y, c) && !has_class(yhat, c)) continue;
    sum += dice_loss_plane(one_hot_plane(y.labels(), c),
                           one_hot_plane(yhat.labels(), c), epsilon);
    ++active;
  }
  return active > 0 ? sum / static_cast<double>(active) : 0.0;
}

double ce_loss(const LabelMask& y, const LabelMask& yhat,
               const LossConfig& cfg) {
  check_masks(y, yhat);
  // Per-class plane CE scaled by the class weight, averaged over the fixed
  // class count so doubling one weight exactly doubles that class's term.
  double sum = 0.0;
  for (int c = 0; c < LabelSchema::kNumClasses; ++c) {
    sum += cfg.class_weights[static_cast<std::size_t>(c)] *
           ce_loss_plane(one_hot_plane(y.labels(), c),
                         one_hot_plane(yhat.labels(), c), cfg.clamp_lo,
                         cfg.clamp_hi);
  }
  return sum / static_cast<double>(LabelSchema::kNumClasses);
}

double texture_loss(const LabelMask& y, const LabelMask& yhat) {
  check_masks(y, yhat);
  const Dims dims = y.dims();
  double sum = 0.0;
  for (int c = 0; c < LabelSchema::kNumClasses; ++c) {
    // Pool the per-pixel L1 over every B-scan plane of this class.
    std::vector<double> per_scan(dims.bscans);
    parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        per_scan[b] = texture_loss_plane(one_hot_plane(y.bscan(b), c),
                                         one_hot_plane(yhat.bscan(b), c),
                                         dims.depth, dims.ascans);
      }
    });
    sum += pairwise_sum(per_scan) / static_cast<double>(dims.bscans);
  }
  return sum / static_cast<double>(LabelSchema::kNumClasses);
}

LossBreakdown total_loss(const LabelMask& y, const LabelMask& yhat,
                         const LossConfig& cfg) {
  LossBreakdown out;
  out.dice = dice_loss(y, yhat, cfg.epsilon);
  out.ce = ce_loss(y, yhat, cfg);
  out.texture = texture_loss(y, yhat);
  out.total = cfg.alpha * out.dice + cfg.beta * out.ce + cfg.gamma * out.texture;
  return out;
}

}  // namespace octquant
