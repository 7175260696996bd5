#include "octquant/core.hpp"

#include <cmath>
#include <sstream>

namespace octquant {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::SpacingMismatch: return "SpacingMismatch";
    case ErrorCode::LateralityMismatch: return "LateralityMismatch";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::HeaderParse: return "HeaderParse";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::IllegalLabelValue: return "IllegalLabelValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::CsvParse: return "CsvParse";
    case ErrorCode::DegenerateBScan: return "DegenerateBScan";
    case ErrorCode::FlatSpectrum: return "FlatSpectrum";
    case ErrorCode::UnboundedLayer: return "UnboundedLayer";
    case ErrorCode::EmptySurface: return "EmptySurface";
    case ErrorCode::CenterOutOfField: return "CenterOutOfField";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateGroup: return "DegenerateGroup";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::NegativeResponse: return "NegativeResponse";
    case ErrorCode::SpecInfeasible: return "SpecInfeasible";
    case ErrorCode::UnknownMode: return "UnknownMode";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::BadArgument: return "BadArgument";
    case ErrorCode::InvalidValue: return "InvalidValue";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

std::string to_string(const Dims& dims) {
  std::ostringstream out;
  out << "(" << dims.bscans << ", " << dims.depth << ", " << dims.ascans
      << ")";
  return out.str();
}

std::string_view to_string(Laterality lat) {
  return lat == Laterality::OD ? "OD" : "OS";
}

Laterality laterality_from_string(std::string_view text) {
  if (text == "OD") return Laterality::OD;
  if (text == "OS") return Laterality::OS;
  fail(ErrorCode::InvalidValue,
       "laterality must be OD or OS, got '" + std::string(text) + "'");
}

bool VoxelSpacing::valid() const {
  return std::isfinite(axial_um) && axial_um > 0.0 &&
         std::isfinite(lateral_um) && lateral_um > 0.0 &&
         std::isfinite(bscan_um) && bscan_um > 0.0;
}

namespace {

constexpr std::array<LabelSchema::ClassInfo, LabelSchema::kNumClasses>
    kClasses = {{
        {label::kVitreous, "Vitreous", true, false, false},
        {label::kRnfl, "RNFL", true, false, true},
        {label::kGclIpl, "GCL+IPL", true, false, true},
        {label::kInl, "INL", true, false, true},
        {label::kOpl, "OPL", true, false, true},
        {label::kOnlIs, "ONL+IS", true, false, true},
        {label::kEz, "EZ", true, false, true},
        {label::kOs, "OS", true, false, true},
        {label::kRpe, "RPE", true, false, true},
        {label::kChoroid, "Choroid", true, false, false},
        {label::kFluid, "Fluid", false, true, true},
        {label::kHrf, "HRF", false, true, true},
    }};

void check_spacing(const VoxelSpacing& spacing) {
  if (!spacing.valid())
    fail(ErrorCode::InvalidValue,
         "voxel spacing must be strictly positive and finite");
}

}  // namespace

std::span<const LabelSchema::ClassInfo> LabelSchema::classes() {
  return kClasses;
}

const LabelSchema::ClassInfo& LabelSchema::by_id(int class_id) {
  if (!valid_id(class_id))
    fail(ErrorCode::UnknownClass,
         "class id " + std::to_string(class_id) + " outside [0, 11]");
  return kClasses[static_cast<std::size_t>(class_id)];
}

const LabelSchema::ClassInfo* LabelSchema::find_by_name(
    std::string_view name) {
  for (const auto& info : kClasses)
    if (info.name == name) return &info;
  return nullptr;
}

Volume3D::Volume3D(Dims dims, VoxelSpacing spacing, Laterality laterality,
                   std::vector<float> voxels,
                   std::array<double, 2> field_of_view_mm)
    : dims_(dims),
      spacing_(spacing),
      laterality_(laterality),
      field_of_view_mm_(field_of_view_mm),
      voxels_(std::move(voxels)) {
  check_spacing(spacing_);
  if (dims_.bscans < 1 || dims_.depth < 16 || dims_.ascans < 16)
    fail(ErrorCode::InvalidValue,
         "volume dims " + to_string(dims_) + " below minimum (1, 16, 16)");
  if (voxels_.size() != dims_.total())
    fail(ErrorCode::InvalidValue,
         "voxel count " + std::to_string(voxels_.size()) +
             " does not match dims " + to_string(dims_));
  for (float v : voxels_) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      fail(ErrorCode::InvalidValue,
           "volume intensities must be finite and within [0, 1]");
  }
  if (!(field_of_view_mm_[0] > 0.0) || !(field_of_view_mm_[1] > 0.0))
    fail(ErrorCode::InvalidValue, "field of view must be positive");
}

LabelMask::LabelMask(Dims dims, VoxelSpacing spacing, Laterality laterality,
                     std::vector<std::uint8_t> labels,
                     std::array<double, 2> field_of_view_mm)
    : dims_(dims),
      spacing_(spacing),
      laterality_(laterality),
      field_of_view_mm_(field_of_view_mm),
      labels_(std::move(labels)) {
  check_spacing(spacing_);
  if (dims_.total() == 0)
    fail(ErrorCode::InvalidValue, "mask dims must be non-zero");
  if (labels_.size() != dims_.total())
    fail(ErrorCode::InvalidValue,
         "label count " + std::to_string(labels_.size()) +
             " does not match dims " + to_string(dims_));
  for (std::uint8_t v : labels_) {
    if (v >= LabelSchema::kNumClasses)
      fail(ErrorCode::IllegalLabelValue,
           "label value " + std::to_string(int(v)) + " outside [0, 11]");
  }
}

ValidatedPair validate_pair(const LabelMask& gt, const LabelMask& pred) {
  if (!(gt.dims() == pred.dims()))
    fail(ErrorCode::DimMismatch, "dims: gt " + to_string(gt.dims()) +
                                     " vs pred " + to_string(pred.dims()));
  if (!(gt.spacing() == pred.spacing()))
    fail(ErrorCode::SpacingMismatch, "spacing differs between gt and pred");
  if (gt.laterality() != pred.laterality())
    fail(ErrorCode::LateralityMismatch,
         std::string("laterality: gt ") +
             std::string(to_string(gt.laterality())) + " vs pred " +
             std::string(to_string(pred.laterality())));
  return ValidatedPair{&gt, &pred};
}

double class_volume_um3(const LabelMask& mask, int class_id) {
  LabelSchema::by_id(class_id);  // throws UnknownClass
  std::size_t count = 0;
  for (std::uint8_t v : mask.labels())
    if (v == class_id) ++count;
  return static_cast<double>(count) * mask.spacing().voxel_volume_um3();
}

}  // namespace octquant
