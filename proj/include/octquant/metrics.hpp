#pragma once

// Segmentation scoring: confusion matrix, Dice, Normalized Surface Dice with
// presence special cases, and the under-/over-segmentation scores with the
// 0.2 cutoff report. All functions are pure; integer tallies make volume
// scores bit-identical across thread counts.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "octquant/core.hpp"

namespace octquant {

/// N x N voxel counts; cm[i][j] = voxels with ground-truth class i predicted
/// as class j.
struct ConfusionMatrix {
  static constexpr int kN = LabelSchema::kNumClasses;

  std::array<std::uint64_t, kN * kN> counts{};

  std::uint64_t at(int gt, int pred) const { return counts[gt * kN + pred]; }
  std::uint64_t& at(int gt, int pred) { return counts[gt * kN + pred]; }
  std::uint64_t row_sum(int gt) const;
  std::uint64_t col_sum(int pred) const;
  std::uint64_t total() const;
};

ConfusionMatrix confusion(const ValidatedPair& pair);

struct NsdConfig {
  double tau_px = 10.0;  // in-plane Euclidean threshold, pixels
};

/// 2TP / (2TP + FP + FN); nullopt when the class is absent from both masks.
std::optional<double> dice(const ConfusionMatrix& cm, int class_id);

/// Surface Dice at tolerance tau, pooled over all B-scans. Boundary pixels
/// are class pixels 4-adjacent to another class or on the image border;
/// distances are in-plane. Presence special cases apply to every class:
/// absent from both masks scores 1.0, present in exactly one scores 0.0.
double nsd(const ValidatedPair& pair, int class_id, const NsdConfig& cfg = {});

struct UssOss {
  std::optional<double> uss;  // (row sum - TP) / row sum
  std::optional<double> oss;  // (col sum - TP) / col sum
};

UssOss uss_oss(const ConfusionMatrix& cm, int class_id);

struct ClassScores {
  std::optional<double> dice;
  double nsd = 0.0;
  std::optional<double> uss;
  std::optional<double> oss;
  bool gt_present = false;
  bool pred_present = false;
};

struct SegBiasFlags {
  bool under = false;  // USS strictly above the cutoff
  bool over = false;   // OSS strictly above the cutoff
  bool uss_defined = false;
  bool oss_defined = false;
};

SegBiasFlags flag_seg_bias(const ClassScores& scores, double cutoff = 0.2);

/// All per-class scores of one validated pair (kN entries, indexed by id).
std::vector<ClassScores> score_all(const ValidatedPair& pair,
                                   const NsdConfig& cfg = {});

/// One evaluated volume x class row, as emitted to the scores CSV.
struct VolumeClassScores {
  std::string volume_id;
  int class_id = 0;
  ClassScores scores;
  SegBiasFlags flags;
};

std::vector<VolumeClassScores> score_volume(const std::string& volume_id,
                                            const ValidatedPair& pair,
                                            const NsdConfig& cfg = {},
                                            double cutoff = 0.2);

namespace detail {

/// Marks boundary pixels of class_id on one rows x cols plane.
std::vector<std::uint8_t> boundary_pixels(std::span<const std::uint8_t> plane,
                                          std::size_t rows, std::size_t cols,
                                          int class_id);

/// Exact squared Euclidean distance transform of a site mask (nonzero =
/// site). Cells in a plane without sites get infinity.
std::vector<double> squared_edt(std::span<const std::uint8_t> sites,
                                std::size_t rows, std::size_t cols);

}  // namespace detail

}  // namespace octquant
