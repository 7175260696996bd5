#pragma once

// Forward-only reference evaluations of the training losses: Dice loss,
// class-weighted cross-entropy, Sobel texture loss, and their weighted sum.
// No gradients, no training — these exist so the formulas are executable
// and testable.

#include <array>
#include <span>
#include <vector>

#include "octquant/core.hpp"

namespace octquant {

struct LossConfig {
  double alpha = 1.0;  // Dice term weight
  double beta = 1.0;   // CE term weight
  double gamma = 1.0;  // texture term weight
  double epsilon = 1e-6;
  double clamp_lo = 1e-7;  // probability clamp for CE
  double clamp_hi = 1.0 - 1e-7;
  // CE class weights: 0.1 Vitreous/Choroid, 0.5 other layers, 1.0 Fluid/HRF
  std::array<double, LabelSchema::kNumClasses> class_weights = {
      0.1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.1, 1.0, 1.0};
};

/// 1 - 2*sum(y*yhat) / (sum(y^2) + sum(yhat^2) + eps) over one class plane.
double dice_loss_plane(std::span<const float> y, std::span<const float> yhat,
                       double epsilon = 1e-6);

/// Mean binary cross-entropy over one plane; yhat clamped to (0, 1).
double ce_loss_plane(std::span<const float> y, std::span<const float> yhat,
                     double clamp_lo = 1e-7, double clamp_hi = 1.0 - 1e-7);

/// Mean L1 difference of Sobel gradient magnitudes over one rows x cols
/// plane.
double texture_loss_plane(std::span<const float> y,
                          std::span<const float> yhat, std::size_t rows,
                          std::size_t cols);

/// Sobel gradient magnitude sqrt(Gx^2 + Gy^2). Evaluated where the full
/// 3x3 window fits; the one-pixel border carries zero gradient.
std::vector<float> sobel_magnitude(std::span<const float> image,
                                   std::size_t rows, std::size_t cols);

struct LossBreakdown {
  double dice = 0.0;
  double ce = 0.0;
  double texture = 0.0;
  double total = 0.0;
};

/// Multi-class losses over one-hot encodings of two masks. Dice averages
/// over classes present in either mask (an absent-absent class would score
/// a spurious 1 through the epsilon term); CE and texture average over all
/// classes. total = alpha*dice + beta*ce + gamma*texture.
LossBreakdown total_loss(const LabelMask& y, const LabelMask& yhat,
                         const LossConfig& cfg = {});

double dice_loss(const LabelMask& y, const LabelMask& yhat,
                 double epsilon = 1e-6);
double ce_loss(const LabelMask& y, const LabelMask& yhat,
               const LossConfig& cfg = {});
double texture_loss(const LabelMask& y, const LabelMask& yhat);

}  // namespace octquant
