#pragma once

// Bit-exact OCTB container reading/writing, cohort CSV ingestion, report
// emission (scores CSV, study JSON/CSV) and the static ETDRS SVG diagram.
//
// OCTB layout: magic "OCTB" | header_len (u32 LE) | UTF-8 JSON header |
// raw little-endian payload in B-major/depth/A-scan order. The header JSON
// is the single source of dims; any payload/dims disagreement is rejected.
// kind "volume" holds u8/u16/f32 intensities (rescaled to [0,1] on read),
// kind "mask" is u8 with values <= 11, kind "map" is an f32 350x350 en-face
// field (NaN cells mark missing data).

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "octquant/core.hpp"
#include "octquant/metrics.hpp"
#include "octquant/phantom.hpp"
#include "octquant/stats.hpp"
#include "octquant/thickness.hpp"

namespace octquant {

enum class VoxelDtype { U8, U16, F32 };

std::string_view to_string(VoxelDtype dtype);

using OctbObject = std::variant<Volume3D, LabelMask, ThicknessMap>;

OctbObject read_octb(const std::filesystem::path& path);

/// Typed convenience wrappers; throw HeaderParse when the file holds a
/// different kind.
Volume3D read_volume(const std::filesystem::path& path);
LabelMask read_mask(const std::filesystem::path& path);
ThicknessMap read_map(const std::filesystem::path& path);

/// Deterministic byte output: equal inputs produce identical files.
void write_octb(const Volume3D& volume, const std::filesystem::path& path,
                VoxelDtype dtype = VoxelDtype::F32);
void write_octb(const LabelMask& mask, const std::filesystem::path& path);
void write_octb(const ThicknessMap& map, const std::filesystem::path& path);

/// Cohort CSV with the mandatory header
/// subject_id,group,age,gender,duration,va_logmar.
struct CohortTable {
  std::vector<StudyRecord> rows;

  const StudyRecord* find(const std::string& subject_id) const;
};

CohortTable read_cohort_csv(const std::filesystem::path& path);

/// Atomic text write (temp file + rename); interrupted runs never leave a
/// truncated file behind.
void write_text_atomic(const std::filesystem::path& path,
                       const std::string& content);

/// Scores CSV: volume_id,class_name,dice,nsd,uss,oss,under_flag,over_flag,
/// gt_present,pred_present. Undefined scores are written as NA.
std::string render_scores_csv(std::span<const VolumeClassScores> rows);
void write_scores_csv(std::span<const VolumeClassScores> rows,
                      const std::filesystem::path& path);

/// Study report JSON (one entry per layer x sector) plus a CSV flattening.
std::string render_study_report_json(const StudyReport& report);
void write_study_report_json(const StudyReport& report,
                             const std::filesystem::path& path);
std::string render_study_report_csv(const StudyReport& report);
void write_study_report_csv(const StudyReport& report,
                            const std::filesystem::path& path);

/// Per-subject ETDRS summary JSON, as produced by the thickness command:
/// {subject_id, laterality, summaries: [{layer, aggregation, cs_excluded,
/// sectors: {CS: ..|null, ...}}]}.
std::string render_subject_summaries_json(
    const std::string& subject_id, Laterality laterality,
    std::span<const std::pair<int, EtdrsSummary>> summaries);
void write_subject_summaries_json(
    const std::string& subject_id, Laterality laterality,
    std::span<const std::pair<int, EtdrsSummary>> summaries,
    const std::filesystem::path& path);

/// Loads every *.json in the directory into the per-subject measurement
/// table consumed by the study drivers.
MeasurementTable read_summaries_dir(const std::filesystem::path& dir);

/// Static ETDRS diagram: concentric 1/3/6 mm circles, ±45° quadrant
/// dividers, sector labels and values, nasal side placed per laterality.
std::string render_etdrs_svg(const EtdrsSummary& summary);
void emit_etdrs_svg(const EtdrsSummary& summary,
                    const std::filesystem::path& path);

/// Phantom spec JSON (all fields optional; omitted ones keep defaults).
PhantomSpec phantom_spec_from_json(const std::string& text);
PhantomSpec read_phantom_spec(const std::filesystem::path& path);

/// Motion estimate sidecar emitted by the preprocess command.
std::string render_motion_json(const std::vector<double>& axial,
                               const std::vector<double>& lateral,
                               const std::vector<double>& rotation,
                               const std::vector<std::uint8_t>& flat_flags);

}  // namespace octquant
