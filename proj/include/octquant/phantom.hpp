#pragma once

// Synthetic OCT volume + ground-truth mask generator. Layer boundaries are
// analytic (sinusoidal undulations over a fixed stack), fluid pockets and
// HRF dots are carved with exact voxel counts, so every derived quantity in
// GroundTruthTables is exact by construction. Substitutes for the private
// clinical data in tests.

#include <cstdint>
#include <map>
#include <vector>

#include "octquant/core.hpp"
#include "octquant/thickness.hpp"

namespace octquant {

struct PhantomLayer {
  int class_id = 0;
  double nominal_um = 0.0;          // top-to-bottom voxel-centre separation
  double undulation_amp_um = 0.0;   // boundary undulation amplitude
  double undulation_wavelength_um = 1500.0;    // along the A-scan axis
  double undulation_wavelength_b_um = 0.0;     // along B; 0 = constant
};

struct PhantomFluid {
  // Ellipsoid in voxel units, carved only where the host layer is present.
  double center_b = 0.0, center_z = 0.0, center_x = 0.0;
  double semi_b = 1.0, semi_z = 1.0, semi_x = 1.0;
  int host_layer = label::kOnlIs;
};

struct PhantomHrf {
  std::size_t count = 0;
  double radius_min_px = 1.0;
  double radius_max_px = 2.5;
  double depth_min_frac = 0.15;  // position within the retinal depth span
  double depth_max_frac = 0.85;
};

struct PhantomMotion {
  // Per-B-scan injected motion; empty vectors mean none.
  std::vector<double> axial_px;
  std::vector<double> lateral_px;
  std::vector<double> rotation_deg;

  bool any() const {
    return !axial_px.empty() || !lateral_px.empty() || !rotation_deg.empty();
  }
};

struct PhantomSpec {
  Dims dims{32, 256, 256};
  VoxelSpacing spacing{4.0, 23.4375, 187.5};
  Laterality laterality = Laterality::OD;
  std::vector<PhantomLayer> layers;  // empty = default 8-layer stack
  std::vector<PhantomFluid> fluids;
  PhantomHrf hrf;
  double speckle_sigma = 0.15;  // multiplicative log-normal speckle
  PhantomMotion motion;
  std::uint64_t seed = 0;
};

/// The default bounded-layer stack (RNFL..RPE) with flat boundaries.
std::vector<PhantomLayer> default_phantom_layers();

struct GroundTruthTables {
  // Per bounded layer: per-column vertical thickness (µm) from the final
  // mask, and sector means over those raw columns.
  std::map<int, EnFaceGrid> layer_thickness_um;
  std::map<int, EtdrsSummary> layer_sector_summary;
  // Pathology sector accumulations (µm³) over raw columns.
  std::map<int, EtdrsSummary> pathology_sector_summary;
  std::map<int, double> class_volume_um3;  // all 12 classes
  PhantomMotion injected_motion;
};

struct PhantomResult {
  Volume3D volume;
  LabelMask mask;
  GroundTruthTables truth;
};

/// Deterministic for a fixed seed (per-B-scan RNG streams). Raises
/// SpecInfeasible when the layer stack does not fit within the depth.
PhantomResult generate(const PhantomSpec& spec);

enum class PerturbMode { DilateClass, ErodeClass, ShiftBoundary, RelabelNoise };

PerturbMode perturb_mode_from_string(std::string_view text);

/// Controlled degradation with a known direction: eroding a class raises its
/// USS, dilating raises its OSS, shifting boundaries by s px pushes NSD
/// toward 0 once s exceeds tau. class_id is ignored by ShiftBoundary and
/// RelabelNoise. Magnitude 0 returns the mask unchanged.
LabelMask perturb_mask(const LabelMask& mask, PerturbMode mode, int class_id,
                       int magnitude, std::uint64_t seed);

}  // namespace octquant
