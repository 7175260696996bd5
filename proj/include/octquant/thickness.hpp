#pragma once

// Layer surface extraction, nearest-point thickness in physical units,
// en-face maps with the fixed 350x350 output resolution, and ETDRS
// sectorisation with laterality-resolved sector naming.

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "octquant/core.hpp"

namespace octquant {

/// Raw en-face grid, one cell per (B, X) column. Row index follows the
/// B-scan axis (row 0 = superior edge), column index the A-scan axis.
struct EnFaceGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> present;

  EnFaceGrid() = default;
  EnFaceGrid(std::size_t r, std::size_t c)
      : rows(r), cols(c), values(r * c, 0.0), present(r * c, 0) {}

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool present_at(std::size_t r, std::size_t c) const {
    return present[r * cols + c] != 0;
  }
  void set(std::size_t r, std::size_t c, double v) {
    values[r * cols + c] = v;
    present[r * cols + c] = 1;
  }
};

enum class MapSemantics { Mean, Sum };

std::string_view to_string(MapSemantics semantics);
MapSemantics map_semantics_from_string(std::string_view text);

/// En-face scalar field at the fixed 350x350 resolution over the scan field.
/// Mean semantics carry µm (layer thickness), Sum semantics µm³ per cell.
struct ThicknessMap {
  static constexpr std::size_t kGridSize = 350;

  MapSemantics semantics = MapSemantics::Mean;
  Laterality laterality = Laterality::OD;
  double fov_x_mm = 6.0;
  double fov_y_mm = 6.0;
  EnFaceGrid grid;

  ThicknessMap() : grid(kGridSize, kGridSize) {}
};

/// One point per (B, X) column where the layer is present, in physical µm
/// coordinates: x = ascan * lateral_um, y = bscan * bscan_um,
/// z = axial row * axial_um.
struct SurfacePoint {
  std::size_t bscan = 0;
  std::size_t ascan = 0;
  double x_um = 0.0;
  double y_um = 0.0;
  double z_um = 0.0;
};

struct LayerSurface {
  std::vector<SurfacePoint> points;
};

/// Topmost/bottommost voxel of the class per column. Pathology voxels
/// interior to the layer do not split it. Vitreous and Choroid are rejected
/// as unbounded; Fluid/HRF are not layers.
std::pair<LayerSurface, LayerSurface> extract_surfaces(const LabelMask& mask,
                                                       int layer_id);

/// For each upper point, Euclidean distance (µm) to the nearest lower point,
/// arranged on the (bscans x ascans) column grid of the upper surface.
EnFaceGrid knn_thickness(const LayerSurface& upper, const LayerSurface& lower,
                         std::size_t bscans, std::size_t ascans);

/// extract_surfaces + knn_thickness for one bounded layer.
EnFaceGrid layer_thickness_grid(const LabelMask& mask, int layer_id);
ThicknessMap layer_thickness_map(const LabelMask& mask, int layer_id);

/// Per-column pathology load in µm³, restricted to the retinal body between
/// the ILM proxy (topmost non-Vitreous voxel) and the BM proxy (bottommost
/// voxel that is neither Choroid nor a pathology).
EnFaceGrid pathology_grid(const LabelMask& mask, int class_id);
ThicknessMap pathology_map(const LabelMask& mask, int class_id);

/// Resamples a raw grid to 350x350. Mean semantics interpolate bilinearly
/// (missing sources are dropped from the weight renormalisation); Sum
/// semantics bin with area-overlap weights so totals are preserved. A target
/// cell is missing iff every contributing source is missing.
ThicknessMap resample_map(const EnFaceGrid& raw, MapSemantics semantics,
                          Laterality laterality = Laterality::OD,
                          double fov_x_mm = 6.0, double fov_y_mm = 6.0);

/// The nine ETDRS subfields. Nasal/temporal resolve against laterality at
/// summarisation time; superior is toward row 0 of the map.
enum class Sector { CS = 0, SI, NI, II, TI, SO, NO, IO, TO };
inline constexpr std::size_t kNumSectors = 9;

std::string_view to_string(Sector sector);
std::optional<Sector> sector_from_string(std::string_view text);

struct EtdrsSummary {
  std::array<std::optional<double>, kNumSectors> sectors;
  Laterality laterality = Laterality::OD;
  MapSemantics aggregation = MapSemantics::Mean;
  double center_x_mm = 0.0;  // offset from the field centre, +x toward
  double center_y_mm = 0.0;  // higher column / row indices
  bool cs_excluded = false;

  std::optional<double> value(Sector s) const {
    return sectors[static_cast<std::size_t>(s)];
  }
};

/// Sector for a point offset (dx, dy) mm from the grid centre, or nullopt
/// beyond the 3 mm radius. Ring bounds: r <= 0.5 CS, <= 1.5 inner,
/// <= 3.0 outer. Diagonal ties go to the superior/inferior quadrants.
std::optional<Sector> classify_etdrs_point(double dx_mm, double dy_mm,
                                           Laterality laterality);

/// Centre offset (mm) of cell `index` on an n-cell axis spanning fov_mm.
/// Written as (2i + 1 - n) * fov / (2n) so mirrored indices negate exactly.
double map_cell_offset_mm(std::size_t index, std::size_t n, double fov_mm);

/// Mean (layers) or accumulation (pathologies) per sector. center_* is the
/// foveal centre offset from the field centre and must stay inside the
/// field. Layer summaries keep the CS value but flag it excluded.
EtdrsSummary etdrs_summarize(const ThicknessMap& map, double center_x_mm,
                             double center_y_mm, Laterality laterality,
                             MapSemantics aggregation);

}  // namespace octquant
