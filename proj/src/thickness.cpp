#include "octquant/thickness.hpp"

#include <algorithm>
#include <cmath>

#include "octquant/kdtree.hpp"
#include "octquant/parallel.hpp"

namespace octquant {

std::string_view to_string(MapSemantics semantics) {
  return semantics == MapSemantics::Mean ? "mean" : "sum";
}

MapSemantics map_semantics_from_string(std::string_view text) {
  if (text == "mean") return MapSemantics::Mean;
  if (text == "sum") return MapSemantics::Sum;
  fail(ErrorCode::InvalidValue,
       "map semantics must be mean or sum, got '" + std::string(text) + "'");
}

std::pair<LayerSurface, LayerSurface> extract_surfaces(const LabelMask& mask,
                                                       int layer_id) {
  const auto& info = LabelSchema::by_id(layer_id);
  if (!info.bounded)
    fail(ErrorCode::UnboundedLayer,
         std::string(info.name) + " is unbounded on one side");
  if (!info.is_layer)
    fail(ErrorCode::InvalidValue,
         std::string(info.name) + " is a pathology, not a retinal layer");

  const Dims dims = mask.dims();
  const VoxelSpacing& sp = mask.spacing();
  LayerSurface upper, lower;
  for (std::size_t b = 0; b < dims.bscans; ++b) {
    const auto plane = mask.bscan(b);
    for (std::size_t x = 0; x < dims.ascans; ++x) {
      long top = -1, bottom = -1;
      for (std::size_t z = 0; z < dims.depth; ++z) {
        if (plane[z * dims.ascans + x] == layer_id) {
          if (top < 0) top = static_cast<long>(z);
          bottom = static_cast<long>(z);
        }
      }
      if (top < 0) continue;
      const double x_um = static_cast<double>(x) * sp.lateral_um;
      const double y_um = static_cast<double>(b) * sp.bscan_um;
      upper.points.push_back(
          {b, x, x_um, y_um, static_cast<double>(top) * sp.axial_um});
      lower.points.push_back(
          {b, x, x_um, y_um, static_cast<double>(bottom) * sp.axial_um});
    }
  }
  return {std::move(upper), std::move(lower)};
}

EnFaceGrid knn_thickness(const LayerSurface& upper, const LayerSurface& lower,
                         std::size_t bscans, std::size_t ascans) {
  if (upper.points.empty() || lower.points.empty())
    fail(ErrorCode::EmptySurface, "both surfaces must be non-empty");

  std::vector<Point3> lower_points;
  lower_points.reserve(lower.points.size());
  for (const auto& p : lower.points)
    lower_points.push_back({p.x_um, p.y_um, p.z_um});
  const KdTree3 index(std::move(lower_points));

  EnFaceGrid grid(bscans, ascans);
  parallel_for(upper.points.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const SurfacePoint& p = upper.points[i];
      const double d2 = index.nearest_squared({p.x_um, p.y_um, p.z_um});
      grid.set(p.bscan, p.ascan, std::sqrt(d2));
    }
  });
  return grid;
}

EnFaceGrid layer_thickness_grid(const LabelMask& mask, int layer_id) {
  const auto [upper, lower] = extract_surfaces(mask, layer_id);
  if (upper.points.empty()) {
    // Layer absent everywhere: an all-missing grid, not an error.
    return EnFaceGrid(mask.dims().bscans, mask.dims().ascans);
  }
  return knn_thickness(upper, lower, mask.dims().bscans, mask.dims().ascans);
}

ThicknessMap layer_thickness_map(const LabelMask& mask, int layer_id) {
  return resample_map(layer_thickness_grid(mask, layer_id),
                      MapSemantics::Mean, mask.laterality(),
                      mask.field_of_view_mm()[0], mask.field_of_view_mm()[1]);
}

EnFaceGrid pathology_grid(const LabelMask& mask, int class_id) {
  const auto& info = LabelSchema::by_id(class_id);
  if (!info.is_pathology)
    fail(ErrorCode::InvalidValue,
         std::string(info.name) + " is not a pathology class");

  const Dims dims = mask.dims();
  const double voxel_volume = mask.spacing().voxel_volume_um3();
  EnFaceGrid grid(dims.bscans, dims.ascans);

  parallel_for(dims.bscans, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const auto plane = mask.bscan(b);
      for (std::size_t x = 0; x < dims.ascans; ++x) {
        // ILM proxy: topmost non-Vitreous voxel. BM proxy: bottommost voxel
        // that is neither Choroid nor a pathology.
        long ilm = -1, bm = -1;
        for (std::size_t z = 0; z < dims.depth; ++z) {
          const std::uint8_t v = plane[z * dims.ascans + x];
          if (ilm < 0 && v != label::kVitreous) ilm = static_cast<long>(z);
          if (v != label::kChoroid && v != label::kFluid && v != label::kHrf)
            bm = static_cast<long>(z);
        }
        std::uint64_t count = 0;
        if (ilm >= 0 && bm >= ilm) {
          for (long z = ilm; z <= bm; ++z)
            if (plane[static_cast<std::size_t>(z) * dims.ascans + x] ==
                class_id)
              ++count;
        }
        grid.set(b, x, static_cast<double>(count) * voxel_volume);
      }
    }
  });
  return grid;
}

ThicknessMap pathology_map(const LabelMask& mask, int class_id) {
  return resample_map(pathology_grid(mask, class_id), MapSemantics::Sum,
                      mask.laterality(), mask.field_of_view_mm()[0],
                      mask.field_of_view_mm()[1]);
}

namespace {

// Overlap weights of source cell s (length n_src axis) against target cells
// on an n_dst axis covering the same span; fractions of the source cell.
struct OverlapAxis {
  // For each source index: first target index and per-target fractions.
  std::vector<std::size_t> first;
  std::vector<std::vector<double>> weight;
};

OverlapAxis make_overlap(std::size_t n_src, std::size_t n_dst) {
  OverlapAxis axis;
  axis.first.resize(n_src);
  axis.weight.resize(n_src);
  const double scale = static_cast<double>(n_dst) / static_cast<double>(n_src);
  for (std::size_t s = 0; s < n_src; ++s) {
    const double a = static_cast<double>(s) * scale;
    const double b = static_cast<double>(s + 1) * scale;
    std::size_t t0 = static_cast<std::size_t>(a);
    if (t0 >= n_dst) t0 = n_dst - 1;
    axis.first[s] = t0;
    for (std::size_t t = t0; t < n_dst; ++t) {
      const double lo = std::max(a, static_cast<double>(t));
      const double hi = std::min(b, static_cast<double>(t + 1));
      if (hi <= lo) break;
      axis.weight[s].push_back((hi - lo) / (b - a));
    }
  }
  return axis;
}

void resample_mean(const EnFaceGrid& raw, EnFaceGrid& out) {
  const std::size_t n = ThicknessMap::kGridSize;
  const double row_scale = static_cast<double>(raw.rows) / n;
  const double col_scale = static_cast<double>(raw.cols) / n;

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const double src_r = (static_cast<double>(r) + 0.5) * row_scale - 0.5;
      const double rc = std::clamp(src_r, 0.0, double(raw.rows - 1));
      const std::size_t r0 = static_cast<std::size_t>(rc);
      const std::size_t r1 = std::min(r0 + 1, raw.rows - 1);
      const double fr = rc - static_cast<double>(r0);
      for (std::size_t c = 0; c < n; ++c) {
        const double src_c = (static_cast<double>(c) + 0.5) * col_scale - 0.5;
        const double cc = std::clamp(src_c, 0.0, double(raw.cols - 1));
        const std::size_t c0 = static_cast<std::size_t>(cc);
        const std::size_t c1 = std::min(c0 + 1, raw.cols - 1);
        const double fc = cc - static_cast<double>(c0);

        const std::size_t idx[4] = {r0 * raw.cols + c0, r0 * raw.cols + c1,
                                    r1 * raw.cols + c0, r1 * raw.cols + c1};
        const double w[4] = {(1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc,
                             fr * (1.0 - fc), fr * fc};
        double value = 0.0, weight = 0.0;
        for (int i = 0; i < 4; ++i) {
          if (!raw.present[idx[i]] || w[i] == 0.0) continue;
          value += w[i] * raw.values[idx[i]];
          weight += w[i];
        }
        if (weight > 0.0) out.set(r, c, value / weight);
      }
    }
  });
}

void resample_sum(const EnFaceGrid& raw, EnFaceGrid& out) {
  const std::size_t n = ThicknessMap::kGridSize;
  const OverlapAxis row_axis = make_overlap(raw.rows, n);
  const OverlapAxis col_axis = make_overlap(raw.cols, n);

  // Serial accumulation in source order; cheap next to the per-cell work
  // upstream and deterministic by construction.
  for (std::size_t sr = 0; sr < raw.rows; ++sr) {
    for (std::size_t sc = 0; sc < raw.cols; ++sc) {
      if (!raw.present[sr * raw.cols + sc]) continue;
      const double v = raw.values[sr * raw.cols + sc];
      const std::size_t tr0 = row_axis.first[sr];
      const std::size_t tc0 = col_axis.first[sc];
      for (std::size_t i = 0; i < row_axis.weight[sr].size(); ++i) {
        for (std::size_t j = 0; j < col_axis.weight[sc].size(); ++j) {
          const std::size_t t = (tr0 + i) * n + (tc0 + j);
          out.values[t] += v * row_axis.weight[sr][i] * col_axis.weight[sc][j];
          out.present[t] = 1;
        }
      }
    }
  }
}

}  // namespace

ThicknessMap resample_map(const EnFaceGrid& raw, MapSemantics semantics,
                          Laterality laterality, double fov_x_mm,
                          double fov_y_mm) {
  if (raw.rows == 0 || raw.cols == 0)
    fail(ErrorCode::InvalidValue, "cannot resample an empty grid");

  ThicknessMap map;
  map.semantics = semantics;
  map.laterality = laterality;
  map.fov_x_mm = fov_x_mm;
  map.fov_y_mm = fov_y_mm;

  if (raw.rows == ThicknessMap::kGridSize &&
      raw.cols == ThicknessMap::kGridSize) {
    map.grid = raw;  // identity resolution: bit-identical pass-through
    return map;
  }
  if (semantics == MapSemantics::Mean)
    resample_mean(raw, map.grid);
  else
    resample_sum(raw, map.grid);
  return map;
}

std::string_view to_string(Sector sector) {
  switch (sector) {
    case Sector::CS: return "CS";
    case Sector::SI: return "SI";
    case Sector::NI: return "NI";
    case Sector::II: return "II";
    case Sector::TI: return "TI";
    case Sector::SO: return "SO";
    case Sector::NO: return "NO";
    case Sector::IO: return "IO";
    case Sector::TO: return "TO";
  }
  return "?";
}

std::optional<Sector> sector_from_string(std::string_view text) {
  for (std::size_t i = 0; i < kNumSectors; ++i)
    if (to_string(static_cast<Sector>(i)) == text)
      return static_cast<Sector>(i);
  return std::nullopt;
}

std::optional<Sector> classify_etdrs_point(double dx_mm, double dy_mm,
                                           Laterality laterality) {
  const double r2 = dx_mm * dx_mm + dy_mm * dy_mm;
  if (r2 > 9.0) return std::nullopt;   // beyond the 6 mm circle
  if (r2 <= 0.25) return Sector::CS;   // 1 mm central subfield
  const bool inner = r2 <= 2.25;       // 3 mm ring

  // Quadrants bounded by the ±45° diagonals; exact ties go vertical.
  if (std::abs(dy_mm) >= std::abs(dx_mm)) {
    const bool superior = dy_mm < 0.0;  // row 0 = superior edge
    return inner ? (superior ? Sector::SI : Sector::II)
                 : (superior ? Sector::SO : Sector::IO);
  }
  const bool nasal_left = laterality == Laterality::OD;
  const bool nasal = (dx_mm < 0.0) == nasal_left;
  return inner ? (nasal ? Sector::NI : Sector::TI)
               : (nasal ? Sector::NO : Sector::TO);
}

double map_cell_offset_mm(std::size_t index, std::size_t n, double fov_mm) {
  return (2.0 * static_cast<double>(index) + 1.0 - static_cast<double>(n)) *
         (fov_mm / (2.0 * static_cast<double>(n)));
}

EtdrsSummary etdrs_summarize(const ThicknessMap& map, double center_x_mm,
                             double center_y_mm, Laterality laterality,
                             MapSemantics aggregation) {
  if (std::abs(center_x_mm) > map.fov_x_mm / 2.0 ||
      std::abs(center_y_mm) > map.fov_y_mm / 2.0)
    fail(ErrorCode::CenterOutOfField,
         "foveal centre offset outside the scan field");

  const std::size_t n = ThicknessMap::kGridSize;
  std::array<std::vector<double>, kNumSectors> cells;

  for (std::size_t r = 0; r < n; ++r) {
    const double dy = map_cell_offset_mm(r, n, map.fov_y_mm) - center_y_mm;
    for (std::size_t c = 0; c < n; ++c) {
      if (!map.grid.present_at(r, c)) continue;
      const double dx = map_cell_offset_mm(c, n, map.fov_x_mm) - center_x_mm;
      const auto sector = classify_etdrs_point(dx, dy, laterality);
      if (!sector) continue;
      cells[static_cast<std::size_t>(*sector)].push_back(map.grid.at(r, c));
    }
  }

  EtdrsSummary summary;
  summary.laterality = laterality;
  summary.aggregation = aggregation;
  summary.center_x_mm = center_x_mm;
  summary.center_y_mm = center_y_mm;
  summary.cs_excluded = aggregation == MapSemantics::Mean;
  for (std::size_t s = 0; s < kNumSectors; ++s) {
    if (cells[s].empty()) continue;
    const double sum = pairwise_sum(cells[s]);
    summary.sectors[s] = aggregation == MapSemantics::Mean
                             ? sum / static_cast<double>(cells[s].size())
                             : sum;
  }
  return summary;
}

}  // namespace octquant
