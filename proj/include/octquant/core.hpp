#pragma once

// Core domain types shared by every module: voxel grids with physical
// spacing, the fixed 12-class label schema, study records, and the common
// error type. All types are immutable after construction and safe to share
// read-only across worker threads.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace octquant {

enum class ErrorCode {
  // pair validation
  DimMismatch,
  SpacingMismatch,
  LateralityMismatch,
  // schema
  UnknownClass,
  // io
  BadMagic,
  HeaderParse,
  TruncatedPayload,
  IllegalLabelValue,
  IoFailure,
  CsvParse,
  // preprocess
  DegenerateBScan,
  FlatSpectrum,
  // thickness
  UnboundedLayer,
  EmptySurface,
  CenterOutOfField,
  // losses
  ShapeMismatch,
  // stats
  DegenerateGroup,
  SingularDesign,
  NonConvergence,
  NegativeResponse,
  // phantom
  SpecInfeasible,
  UnknownMode,
  // cli
  EmptyBatch,
  BadArgument,
  // construction / misc validation
  InvalidValue,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code next to the human message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

/// Grid extents. Storage order is B-major, then axial depth, then A-scan:
/// voxel (b, z, x) lives at index (b * depth + z) * ascans + x.
struct Dims {
  std::size_t bscans = 0;  // number of B-scans (slow axis, Y)
  std::size_t depth = 0;   // axial rows per B-scan (Z)
  std::size_t ascans = 0;  // A-scans per B-scan (fast axis, X)

  std::size_t total() const { return bscans * depth * ascans; }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& dims);

enum class Laterality { OD, OS };

std::string_view to_string(Laterality lat);
Laterality laterality_from_string(std::string_view text);

/// Physical voxel pitch, micrometres per step along each axis.
struct VoxelSpacing {
  double axial_um = 0.0;    // depth step within a B-scan (Z)
  double lateral_um = 0.0;  // A-scan pitch within a B-scan (X)
  double bscan_um = 0.0;    // distance between adjacent B-scans (Y)

  double voxel_volume_um3() const { return axial_um * lateral_um * bscan_um; }
  bool valid() const;
  bool operator==(const VoxelSpacing&) const = default;
};

/// The fixed ordered class list. IDs are contiguous from 0; Vitreous and
/// Choroid are unbounded on one side, Fluid and HRF are pathologies.
namespace label {
inline constexpr int kVitreous = 0;
inline constexpr int kRnfl = 1;
inline constexpr int kGclIpl = 2;
inline constexpr int kInl = 3;
inline constexpr int kOpl = 4;
inline constexpr int kOnlIs = 5;
inline constexpr int kEz = 6;
inline constexpr int kOs = 7;
inline constexpr int kRpe = 8;
inline constexpr int kChoroid = 9;
inline constexpr int kFluid = 10;
inline constexpr int kHrf = 11;
}  // namespace label

class LabelSchema {
 public:
  static constexpr int kNumClasses = 12;

  struct ClassInfo {
    int id;
    std::string_view name;
    bool is_layer;      // anatomical stratum (incl. Vitreous/Choroid)
    bool is_pathology;  // Fluid or HRF
    bool bounded;       // false for Vitreous and Choroid
  };

  static std::span<const ClassInfo> classes();
  /// Throws UnknownClass for ids outside [0, 11].
  static const ClassInfo& by_id(int class_id);
  /// Returns nullptr when no class carries that name.
  static const ClassInfo* find_by_name(std::string_view name);
  static bool valid_id(int class_id) {
    return class_id >= 0 && class_id < kNumClasses;
  }
};

/// Anisotropic voxel grid of intensities in [0, 1], B-major storage.
class Volume3D {
 public:
  Volume3D(Dims dims, VoxelSpacing spacing, Laterality laterality,
           std::vector<float> voxels,
           std::array<double, 2> field_of_view_mm = {6.0, 6.0});

  const Dims& dims() const { return dims_; }
  const VoxelSpacing& spacing() const { return spacing_; }
  Laterality laterality() const { return laterality_; }
  std::array<double, 2> field_of_view_mm() const { return field_of_view_mm_; }

  float at(std::size_t b, std::size_t z, std::size_t x) const {
    return voxels_[(b * dims_.depth + z) * dims_.ascans + x];
  }
  std::span<const float> voxels() const { return voxels_; }
  /// Contiguous depth*ascans slice of one B-scan.
  std::span<const float> bscan(std::size_t b) const {
    const std::size_t plane = dims_.depth * dims_.ascans;
    return {voxels_.data() + b * plane, plane};
  }

 private:
  Dims dims_;
  VoxelSpacing spacing_;
  Laterality laterality_;
  std::array<double, 2> field_of_view_mm_;
  std::vector<float> voxels_;
};

/// Voxel grid of class IDs over the fixed 12-class schema.
class LabelMask {
 public:
  LabelMask(Dims dims, VoxelSpacing spacing, Laterality laterality,
            std::vector<std::uint8_t> labels,
            std::array<double, 2> field_of_view_mm = {6.0, 6.0});

  const Dims& dims() const { return dims_; }
  const VoxelSpacing& spacing() const { return spacing_; }
  Laterality laterality() const { return laterality_; }
  std::array<double, 2> field_of_view_mm() const { return field_of_view_mm_; }

  std::uint8_t at(std::size_t b, std::size_t z, std::size_t x) const {
    return labels_[(b * dims_.depth + z) * dims_.ascans + x];
  }
  std::span<const std::uint8_t> labels() const { return labels_; }
  std::span<const std::uint8_t> bscan(std::size_t b) const {
    const std::size_t plane = dims_.depth * dims_.ascans;
    return {labels_.data() + b * plane, plane};
  }

 private:
  Dims dims_;
  VoxelSpacing spacing_;
  Laterality laterality_;
  std::array<double, 2> field_of_view_mm_;
  std::vector<std::uint8_t> labels_;
};

/// One cohort subject. Encodings follow the study convention:
/// group NPDR=0 / PDR=1, gender female=0 / male=1.
struct StudyRecord {
  std::string subject_id;
  int group = 0;
  double age = 0.0;
  int gender = 0;
  double diabetes_duration = 0.0;
  double va_logmar = 0.0;
};

/// Non-owning view over a ground-truth/prediction pair whose dims, spacing
/// and laterality have been checked to match.
struct ValidatedPair {
  const LabelMask* gt = nullptr;
  const LabelMask* pred = nullptr;
};

/// Returns the pair iff dims, spacing and laterality all match; the thrown
/// error names the first offending field.
ValidatedPair validate_pair(const LabelMask& gt, const LabelMask& pred);

/// Physical volume of one class: voxel count times the spacing product.
double class_volume_um3(const LabelMask& mask, int class_id);

}  // namespace octquant
