#include "octquant/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "octquant/parallel.hpp"

namespace octquant {

std::uint64_t ConfusionMatrix::row_sum(int gt) const {
  std::uint64_t sum = 0;
  for (int j = 0; j < kN; ++j) sum += at(gt, j);
  return sum;
}

std::uint64_t ConfusionMatrix::col_sum(int pred) const {
  std::uint64_t sum = 0;
  for (int i = 0; i < kN; ++i) sum += at(i, pred);
  return sum;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (auto c : counts) sum += c;
  return sum;
}

ConfusionMatrix confusion(const ValidatedPair& pair) {
  const Dims dims = pair.gt->dims();

  // Per-B-scan tallies merged in scan order; integer counts, so the result
  // is independent of the thread count.
  std::vector<ConfusionMatrix> parts(dims.bscans);
  parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const auto gt = pair.gt->bscan(b);
      const auto pred = pair.pred->bscan(b);
      for (std::size_t i = 0; i < gt.size(); ++i)
        ++parts[b].at(gt[i], pred[i]);
    }
  });

  ConfusionMatrix cm;
  for (const auto& part : parts)
    for (std::size_t i = 0; i < cm.counts.size(); ++i)
      cm.counts[i] += part.counts[i];
  return cm;
}

std::optional<double> dice(const ConfusionMatrix& cm, int class_id) {
  LabelSchema::by_id(class_id);
  const std::uint64_t tp = cm.at(class_id, class_id);
  const std::uint64_t fn = cm.row_sum(class_id) - tp;
  const std::uint64_t fp = cm.col_sum(class_id) - tp;
  if (tp + fn + fp == 0) return std::nullopt;
  return 2.0 * static_cast<double>(tp) /
         static_cast<double>(2 * tp + fp + fn);
}

UssOss uss_oss(const ConfusionMatrix& cm, int class_id) {
  LabelSchema::by_id(class_id);
  const std::uint64_t tp = cm.at(class_id, class_id);
  const std::uint64_t row = cm.row_sum(class_id);
  const std::uint64_t col = cm.col_sum(class_id);
  UssOss result;
  if (row > 0)
    result.uss = static_cast<double>(row - tp) / static_cast<double>(row);
  if (col > 0)
    result.oss = static_cast<double>(col - tp) / static_cast<double>(col);
  return result;
}

SegBiasFlags flag_seg_bias(const ClassScores& scores, double cutoff) {
  SegBiasFlags flags;
  flags.uss_defined = scores.uss.has_value();
  flags.oss_defined = scores.oss.has_value();
  if (scores.uss) flags.under = *scores.uss > cutoff;  // strict inequality
  if (scores.oss) flags.over = *scores.oss > cutoff;
  return flags;
}

namespace detail {

std::vector<std::uint8_t> boundary_pixels(std::span<const std::uint8_t> plane,
                                          std::size_t rows, std::size_t cols,
                                          int class_id) {
  std::vector<std::uint8_t> out(rows * cols, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (plane[i] != class_id) continue;
      const bool border = r == 0 || r + 1 == rows || c == 0 || c + 1 == cols;
      if (border || plane[i - cols] != class_id || plane[i + cols] != class_id ||
          plane[i - 1] != class_id || plane[i + 1] != class_id)
        out[i] = 1;
    }
  }
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher 1D squared distance transform.
void edt_1d(const double* f, std::size_t n, double* d, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < static_cast<int>(n); ++q) {
    if (f[q] == kInf) continue;
    double s;
    for (;;) {
      const int p = v[k];
      if (f[p] == kInf) {
        // No finite parabola yet; take q as the first.
        if (k == 0) {
          v[0] = q;
          z[0] = -kInf;
          z[1] = kInf;
          goto next_q;
        }
        --k;
        continue;
      }
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) /
          (2.0 * q - 2.0 * p);
      if (s <= z[k]) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  next_q:;
  }
  if (f[v[0]] == kInf) {
    for (std::size_t q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  k = 0;
  for (int q = 0; q < static_cast<int>(n); ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = double(q) - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

std::vector<double> squared_edt(std::span<const std::uint8_t> sites,
                                std::size_t rows, std::size_t cols) {
  std::vector<double> dist(rows * cols);
  for (std::size_t i = 0; i < sites.size(); ++i)
    dist[i] = sites[i] ? 0.0 : kInf;

  const std::size_t n = std::max(rows, cols);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);

  // Columns first, then rows.
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) f[r] = dist[r * cols + c];
    edt_1d(f.data(), rows, d.data(), v.data(), z.data());
    for (std::size_t r = 0; r < rows; ++r) dist[r * cols + c] = d[r];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) f[c] = dist[r * cols + c];
    edt_1d(f.data(), cols, d.data(), v.data(), z.data());
    for (std::size_t c = 0; c < cols; ++c) dist[r * cols + c] = d[c];
  }
  return dist;
}

}  // namespace detail

namespace {

struct SurfaceCounts {
  std::uint64_t within = 0;  // distances <= tau (both directions pooled)
  std::uint64_t total = 0;
};

// Distance tallies for one class over one B-scan plane.
void tally_plane(std::span<const std::uint8_t> gt_plane,
                 std::span<const std::uint8_t> pred_plane, std::size_t rows,
                 std::size_t cols, int class_id, double tau_sq,
                 SurfaceCounts& counts) {
  const auto gt_sites =
      detail::boundary_pixels(gt_plane, rows, cols, class_id);
  const auto pred_sites =
      detail::boundary_pixels(pred_plane, rows, cols, class_id);

  bool gt_any = false, pred_any = false;
  for (auto s : gt_sites) gt_any |= s != 0;
  for (auto s : pred_sites) pred_any |= s != 0;
  if (!gt_any && !pred_any) return;

  // Boundary pixels on a side with no counterpart in this plane contribute
  // to the denominator only (their in-plane nearest distance is infinite).
  if (gt_any && pred_any) {
    const auto gt_edt = detail::squared_edt(gt_sites, rows, cols);
    const auto pred_edt = detail::squared_edt(pred_sites, rows, cols);
    for (std::size_t i = 0; i < pred_sites.size(); ++i) {
      if (pred_sites[i]) {
        ++counts.total;
        if (gt_edt[i] <= tau_sq) ++counts.within;
      }
      if (gt_sites[i]) {
        ++counts.total;
        if (pred_edt[i] <= tau_sq) ++counts.within;
      }
    }
  } else {
    for (std::size_t i = 0; i < pred_sites.size(); ++i)
      counts.total += (pred_sites[i] != 0) + (gt_sites[i] != 0);
  }
}

// Per-class tallies over the whole volume, parallel over B-scans.
// only_class < 0 tallies every class.
std::array<SurfaceCounts, ConfusionMatrix::kN> nsd_counts(
    const ValidatedPair& pair, const NsdConfig& cfg, int only_class = -1) {
  const Dims dims = pair.gt->dims();
  const double tau_sq = cfg.tau_px * cfg.tau_px;

  std::vector<std::array<SurfaceCounts, ConfusionMatrix::kN>> per_scan(
      dims.bscans);
  parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const auto gt_plane = pair.gt->bscan(b);
      const auto pred_plane = pair.pred->bscan(b);
      for (int c = 0; c < ConfusionMatrix::kN; ++c) {
        if (only_class >= 0 && c != only_class) continue;
        tally_plane(gt_plane, pred_plane, dims.depth, dims.ascans, c, tau_sq,
                    per_scan[b][c]);
      }
    }
  });

  std::array<SurfaceCounts, ConfusionMatrix::kN> totals{};
  for (const auto& scan : per_scan)
    for (int c = 0; c < ConfusionMatrix::kN; ++c) {
      totals[c].within += scan[c].within;
      totals[c].total += scan[c].total;
    }
  return totals;
}

bool class_present(const LabelMask& mask, int class_id) {
  for (auto v : mask.labels())
    if (v == class_id) return true;
  return false;
}

double nsd_from_counts(const SurfaceCounts& counts, bool gt_present,
                       bool pred_present) {
  if (!gt_present && !pred_present) return 1.0;  // correct empty prediction
  if (gt_present != pred_present) return 0.0;    // presence mismatch
  return static_cast<double>(counts.within) /
         static_cast<double>(counts.total);
}

}  // namespace

double nsd(const ValidatedPair& pair, int class_id, const NsdConfig& cfg) {
  LabelSchema::by_id(class_id);
  if (cfg.tau_px <= 0.0) fail(ErrorCode::InvalidValue, "tau must be > 0");
  const bool gt_present = class_present(*pair.gt, class_id);
  const bool pred_present = class_present(*pair.pred, class_id);
  if (!gt_present || !pred_present)
    return nsd_from_counts({}, gt_present, pred_present);
  return nsd_from_counts(nsd_counts(pair, cfg, class_id)[class_id], true,
                         true);
}

std::vector<ClassScores> score_all(const ValidatedPair& pair,
                                   const NsdConfig& cfg) {
  if (cfg.tau_px <= 0.0) fail(ErrorCode::InvalidValue, "tau must be > 0");
  const ConfusionMatrix cm = confusion(pair);
  const auto surface = nsd_counts(pair, cfg);

  std::vector<ClassScores> scores(ConfusionMatrix::kN);
  for (int c = 0; c < ConfusionMatrix::kN; ++c) {
    ClassScores& s = scores[c];
    s.gt_present = cm.row_sum(c) > 0;
    s.pred_present = cm.col_sum(c) > 0;
    s.dice = dice(cm, c);
    const UssOss uo = uss_oss(cm, c);
    s.uss = uo.uss;
    s.oss = uo.oss;
    s.nsd = nsd_from_counts(surface[c], s.gt_present, s.pred_present);
  }
  return scores;
}

std::vector<VolumeClassScores> score_volume(const std::string& volume_id,
                                            const ValidatedPair& pair,
                                            const NsdConfig& cfg,
                                            double cutoff) {
  const auto scores = score_all(pair, cfg);
  std::vector<VolumeClassScores> rows;
  rows.reserve(scores.size());
  for (int c = 0; c < ConfusionMatrix::kN; ++c)
    rows.push_back(VolumeClassScores{volume_id, c, scores[c],
                                     flag_seg_bias(scores[c], cutoff)});
  return rows;
}

}  // namespace octquant
