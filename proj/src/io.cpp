#include "octquant/io.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace octquant {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'O', 'C', 'T', 'B'};

std::size_t dtype_size(VoxelDtype dtype) {
  switch (dtype) {
    case VoxelDtype::U8: return 1;
    case VoxelDtype::U16: return 2;
    case VoxelDtype::F32: return 4;
  }
  return 0;
}

VoxelDtype dtype_from_string(const std::string& text) {
  if (text == "u8") return VoxelDtype::U8;
  if (text == "u16") return VoxelDtype::U16;
  if (text == "f32") return VoxelDtype::F32;
  fail(ErrorCode::HeaderParse, "unknown dtype '" + text + "'");
}

void put_u16_le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint16_t get_u16_le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof())
    fail(ErrorCode::IoFailure, "read failed for '" + path.string() + "'");
  return std::move(buf).str();
}

json header_common(const Dims& dims, const VoxelSpacing& spacing,
                   Laterality laterality, std::array<double, 2> fov,
                   const char* kind, const char* dtype) {
  json h;
  h["kind"] = kind;
  h["dims"] = {dims.bscans, dims.depth, dims.ascans};
  h["spacing_um"] = {spacing.axial_um, spacing.lateral_um, spacing.bscan_um};
  h["laterality"] = to_string(laterality);
  h["dtype"] = dtype;
  h["fov_mm"] = {fov[0], fov[1]};
  return h;
}

void write_container(const std::filesystem::path& path, const json& header,
                     const std::string& payload) {
  std::string bytes;
  const std::string header_text = header.dump();
  bytes.reserve(8 + header_text.size() + payload.size());
  bytes.append(kMagic, 4);
  put_u32_le(bytes, static_cast<std::uint32_t>(header_text.size()));
  bytes += header_text;
  bytes += payload;
  write_text_atomic(path, bytes);
}

float f32_from_bits(std::uint32_t bits) { return std::bit_cast<float>(bits); }
std::uint32_t bits_from_f32(float v) { return std::bit_cast<std::uint32_t>(v); }

}  // namespace

std::string_view to_string(VoxelDtype dtype) {
  switch (dtype) {
    case VoxelDtype::U8: return "u8";
    case VoxelDtype::U16: return "u16";
    case VoxelDtype::F32: return "f32";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// OCTB writing
// ---------------------------------------------------------------------------

void write_octb(const Volume3D& volume, const std::filesystem::path& path,
                VoxelDtype dtype) {
  const json header =
      header_common(volume.dims(), volume.spacing(), volume.laterality(),
                    volume.field_of_view_mm(), "volume",
                    std::string(to_string(dtype)).c_str());
  std::string payload;
  payload.reserve(volume.voxels().size() * dtype_size(dtype));
  for (float v : volume.voxels()) {
    switch (dtype) {
      case VoxelDtype::U8:
        payload.push_back(static_cast<char>(
            static_cast<std::uint8_t>(std::lround(v * 255.0f))));
        break;
      case VoxelDtype::U16:
        put_u16_le(payload,
                   static_cast<std::uint16_t>(std::lround(v * 65535.0f)));
        break;
      case VoxelDtype::F32:
        put_u32_le(payload, bits_from_f32(v));
        break;
    }
  }
  write_container(path, header, payload);
}

void write_octb(const LabelMask& mask, const std::filesystem::path& path) {
  const json header =
      header_common(mask.dims(), mask.spacing(), mask.laterality(),
                    mask.field_of_view_mm(), "mask", "u8");
  std::string payload(reinterpret_cast<const char*>(mask.labels().data()),
                      mask.labels().size());
  write_container(path, header, payload);
}

void write_octb(const ThicknessMap& map, const std::filesystem::path& path) {
  const std::size_t n = ThicknessMap::kGridSize;
  json header = header_common({n, 1, n}, {1.0, 1.0, 1.0}, map.laterality,
                              {map.fov_x_mm, map.fov_y_mm}, "map", "f32");
  header["semantics"] = to_string(map.semantics);
  std::string payload;
  payload.reserve(n * n * 4);
  for (std::size_t i = 0; i < n * n; ++i) {
    const float v = map.grid.present[i]
                        ? static_cast<float>(map.grid.values[i])
                        : std::numeric_limits<float>::quiet_NaN();
    put_u32_le(payload, bits_from_f32(v));
  }
  write_container(path, header, payload);
}

// ---------------------------------------------------------------------------
// OCTB reading
// ---------------------------------------------------------------------------

namespace {

struct ParsedHeader {
  std::string kind;
  Dims dims;
  VoxelSpacing spacing;
  Laterality laterality = Laterality::OD;
  VoxelDtype dtype = VoxelDtype::F32;
  std::array<double, 2> fov = {6.0, 6.0};
  MapSemantics semantics = MapSemantics::Mean;
};

ParsedHeader parse_header(const std::string& text) {
  json h;
  try {
    h = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::HeaderParse, std::string("header JSON: ") + e.what());
  }
  ParsedHeader out;
  try {
    out.kind = h.at("kind").get<std::string>();
    const auto dims = h.at("dims");
    if (!dims.is_array() || dims.size() != 3)
      fail(ErrorCode::HeaderParse, "dims must be a 3-element array");
    out.dims = {dims[0].get<std::size_t>(), dims[1].get<std::size_t>(),
                dims[2].get<std::size_t>()};
    const auto spacing = h.at("spacing_um");
    if (!spacing.is_array() || spacing.size() != 3)
      fail(ErrorCode::HeaderParse, "spacing_um must be a 3-element array");
    out.spacing = {spacing[0].get<double>(), spacing[1].get<double>(),
                   spacing[2].get<double>()};
    out.laterality =
        laterality_from_string(h.at("laterality").get<std::string>());
    out.dtype = dtype_from_string(h.at("dtype").get<std::string>());
    if (h.contains("fov_mm")) {
      out.fov = {h["fov_mm"][0].get<double>(), h["fov_mm"][1].get<double>()};
    }
    if (h.contains("semantics"))
      out.semantics =
          map_semantics_from_string(h["semantics"].get<std::string>());
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorCode::HeaderParse, std::string("header fields: ") + e.what());
  }
  if (out.kind != "volume" && out.kind != "mask" && out.kind != "map")
    fail(ErrorCode::HeaderParse, "unknown kind '" + out.kind + "'");
  return out;
}

}  // namespace

OctbObject read_octb(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    fail(ErrorCode::IoFailure, "no such file: '" + path.string() + "'");
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorCode::BadMagic, "'" + path.string() + "' is not an OCTB file");

  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t header_len = get_u32_le(base + 4);
  if (8 + static_cast<std::size_t>(header_len) > bytes.size())
    fail(ErrorCode::HeaderParse, "header length exceeds the file size");
  const ParsedHeader header =
      parse_header(bytes.substr(8, header_len));

  const std::size_t total = header.dims.total();
  const std::size_t expected = total * dtype_size(header.dtype);
  const std::size_t actual = bytes.size() - 8 - header_len;
  if (actual != expected)
    fail(ErrorCode::TruncatedPayload,
         "payload is " + std::to_string(actual) + " bytes, expected " +
             std::to_string(expected));
  const unsigned char* payload = base + 8 + header_len;

  if (header.kind == "mask") {
    if (header.dtype != VoxelDtype::U8)
      fail(ErrorCode::HeaderParse, "mask dtype must be u8");
    std::vector<std::uint8_t> labels(payload, payload + total);
    return LabelMask(header.dims, header.spacing, header.laterality,
                     std::move(labels), header.fov);
  }

  if (header.kind == "map") {
    if (header.dtype != VoxelDtype::F32)
      fail(ErrorCode::HeaderParse, "map dtype must be f32");
    const std::size_t n = ThicknessMap::kGridSize;
    if (header.dims.bscans != n || header.dims.depth != 1 ||
        header.dims.ascans != n)
      fail(ErrorCode::HeaderParse, "map dims must be [350, 1, 350]");
    ThicknessMap map;
    map.semantics = header.semantics;
    map.laterality = header.laterality;
    map.fov_x_mm = header.fov[0];
    map.fov_y_mm = header.fov[1];
    for (std::size_t i = 0; i < total; ++i) {
      const float v = f32_from_bits(get_u32_le(payload + 4 * i));
      if (std::isnan(v)) continue;  // missing cell
      map.grid.values[i] = v;
      map.grid.present[i] = 1;
    }
    return map;
  }

  // volume
  std::vector<float> voxels(total);
  switch (header.dtype) {
    case VoxelDtype::U8:
      for (std::size_t i = 0; i < total; ++i)
        voxels[i] = static_cast<float>(payload[i]) / 255.0f;
      break;
    case VoxelDtype::U16:
      for (std::size_t i = 0; i < total; ++i)
        voxels[i] = static_cast<float>(get_u16_le(payload + 2 * i)) / 65535.0f;
      break;
    case VoxelDtype::F32:
      for (std::size_t i = 0; i < total; ++i) {
        const float v = f32_from_bits(get_u32_le(payload + 4 * i));
        if (!std::isfinite(v))
          fail(ErrorCode::InvalidValue,
               "volume payload contains non-finite intensities");
        voxels[i] = std::clamp(v, 0.0f, 1.0f);  // load-time normalization
      }
      break;
  }
  return Volume3D(header.dims, header.spacing, header.laterality,
                  std::move(voxels), header.fov);
}

Volume3D read_volume(const std::filesystem::path& path) {
  auto obj = read_octb(path);
  if (auto* v = std::get_if<Volume3D>(&obj)) return std::move(*v);
  fail(ErrorCode::HeaderParse,
       "'" + path.string() + "' does not hold a volume");
}

LabelMask read_mask(const std::filesystem::path& path) {
  auto obj = read_octb(path);
  if (auto* m = std::get_if<LabelMask>(&obj)) return std::move(*m);
  fail(ErrorCode::HeaderParse, "'" + path.string() + "' does not hold a mask");
}

ThicknessMap read_map(const std::filesystem::path& path) {
  auto obj = read_octb(path);
  if (auto* m = std::get_if<ThicknessMap>(&obj)) return std::move(*m);
  fail(ErrorCode::HeaderParse, "'" + path.string() + "' does not hold a map");
}

// ---------------------------------------------------------------------------
// Cohort CSV
// ---------------------------------------------------------------------------

const StudyRecord* CohortTable::find(const std::string& subject_id) const {
  for (const auto& rec : rows)
    if (rec.subject_id == subject_id) return &rec;
  return nullptr;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  fields.push_back(field);
  return fields;
}

double parse_double(const std::string& text, std::size_t line_no,
                    const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size() || !std::isfinite(v)) throw std::exception();
    return v;
  } catch (...) {
    fail(ErrorCode::CsvParse, "line " + std::to_string(line_no) + ": bad " +
                                  what + " value '" + text + "'");
  }
}

int parse_binary(const std::string& text, std::size_t line_no,
                 const char* what) {
  if (text == "0") return 0;
  if (text == "1") return 1;
  fail(ErrorCode::CsvParse, "line " + std::to_string(line_no) + ": " + what +
                                " must be 0 or 1, got '" + text + "'");
}

}  // namespace

CohortTable read_cohort_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    fail(ErrorCode::IoFailure, "no such file: '" + path.string() + "'");
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorCode::CsvParse, "empty cohort file");
  {
    const auto fields = split_csv_line(line);
    const std::vector<std::string> expected = {
        "subject_id", "group", "age", "gender", "duration", "va_logmar"};
    if (fields != expected)
      fail(ErrorCode::CsvParse,
           "header must be subject_id,group,age,gender,duration,va_logmar");
  }

  CohortTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 6)
      fail(ErrorCode::CsvParse,
           "line " + std::to_string(line_no) + ": expected 6 fields, got " +
               std::to_string(fields.size()));
    StudyRecord rec;
    rec.subject_id = fields[0];
    if (rec.subject_id.empty())
      fail(ErrorCode::CsvParse,
           "line " + std::to_string(line_no) + ": empty subject_id");
    if (table.find(rec.subject_id) != nullptr)
      fail(ErrorCode::CsvParse, "duplicate subject_id '" + rec.subject_id +
                                    "' at line " + std::to_string(line_no));
    rec.group = parse_binary(fields[1], line_no, "group");
    rec.age = parse_double(fields[2], line_no, "age");
    rec.gender = parse_binary(fields[3], line_no, "gender");
    rec.diabetes_duration = parse_double(fields[4], line_no, "duration");
    rec.va_logmar = parse_double(fields[5], line_no, "va_logmar");
    if (rec.age < 0.0 || rec.diabetes_duration < 0.0)
      fail(ErrorCode::CsvParse,
           "line " + std::to_string(line_no) + ": age and duration must be >= 0");
    table.rows.push_back(std::move(rec));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Atomic writes
// ---------------------------------------------------------------------------

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& content) {
  static std::atomic<std::uint64_t> counter{0};
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      fail(ErrorCode::IoFailure, "cannot create '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out.good())
      fail(ErrorCode::IoFailure, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCode::IoFailure, "cannot rename into '" + path.string() + "'");
  }
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

namespace {

std::string fmt_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_fixed(*v) : std::string("NA");
}

const char* fmt_bool(bool v) { return v ? "true" : "false"; }

}  // namespace

std::string render_scores_csv(std::span<const VolumeClassScores> rows) {
  std::string out =
      "volume_id,class_name,dice,nsd,uss,oss,under_flag,over_flag,"
      "gt_present,pred_present\n";
  for (const auto& row : rows) {
    out += row.volume_id;
    out += ',';
    out += LabelSchema::by_id(row.class_id).name;
    out += ',';
    out += fmt_opt(row.scores.dice);
    out += ',';
    out += fmt_fixed(row.scores.nsd);
    out += ',';
    out += fmt_opt(row.scores.uss);
    out += ',';
    out += fmt_opt(row.scores.oss);
    out += ',';
    out += fmt_bool(row.flags.under);
    out += ',';
    out += fmt_bool(row.flags.over);
    out += ',';
    out += fmt_bool(row.scores.gt_present);
    out += ',';
    out += fmt_bool(row.scores.pred_present);
    out += '\n';
  }
  return out;
}

void write_scores_csv(std::span<const VolumeClassScores> rows,
                      const std::filesystem::path& path) {
  write_text_atomic(path, render_scores_csv(rows));
}

namespace {

json cell_to_json(const StudyCell& cell) {
  json j;
  j["layer"] = LabelSchema::by_id(cell.class_id).name;
  j["sector"] = to_string(static_cast<Sector>(cell.sector));
  j["family"] = cell.family == Family::Tweedie ? "tweedie" : "gaussian";
  j["n_subjects"] = cell.n_subjects;
  if (cell.ok) {
    j["coefficient"] = cell.coefficient;
    j["std_error"] = cell.std_error;
    j["ci_lower"] = cell.ci_lower;
    j["ci_upper"] = cell.ci_upper;
    j["p_raw"] = cell.p_raw;
    if (cell.p_fdr)
      j["p_fdr"] = *cell.p_fdr;
    else
      j["p_fdr"] = nullptr;
    j["significant_raw"] = cell.significant_raw;
    j["significant_fdr"] = cell.significant_fdr;
  } else {
    j["error"] = cell.error;
  }
  return j;
}

}  // namespace

std::string render_study_report_json(const StudyReport& report) {
  json j;
  j["study"] = report.study;
  j["alpha"] = report.alpha;
  j["tweedie_power"] = report.tweedie_power;
  json cells = json::array();
  for (const auto& cell : report.cells) cells.push_back(cell_to_json(cell));
  j["cells"] = std::move(cells);
  return j.dump(2) + "\n";
}

void write_study_report_json(const StudyReport& report,
                             const std::filesystem::path& path) {
  write_text_atomic(path, render_study_report_json(report));
}

std::string render_study_report_csv(const StudyReport& report) {
  std::string out =
      "layer,sector,family,n_subjects,coefficient,ci_lower,ci_upper,p_raw,"
      "p_fdr,significant_fdr,error\n";
  for (const auto& cell : report.cells) {
    out += LabelSchema::by_id(cell.class_id).name;
    out += ',';
    out += to_string(static_cast<Sector>(cell.sector));
    out += ',';
    out += cell.family == Family::Tweedie ? "tweedie" : "gaussian";
    out += ',';
    out += std::to_string(cell.n_subjects);
    out += ',';
    if (cell.ok) {
      out += fmt_fixed(cell.coefficient);
      out += ',';
      out += fmt_fixed(cell.ci_lower);
      out += ',';
      out += fmt_fixed(cell.ci_upper);
      out += ',';
      out += fmt_fixed(cell.p_raw);
      out += ',';
      out += cell.p_fdr ? fmt_fixed(*cell.p_fdr) : std::string("NA");
      out += ',';
      out += fmt_bool(cell.significant_fdr);
      out += ',';
    } else {
      out += ",,,,,,";
    }
    // CSV-safe: commas in error text are replaced.
    std::string err = cell.error;
    std::replace(err.begin(), err.end(), ',', ';');
    out += err;
    out += '\n';
  }
  return out;
}

void write_study_report_csv(const StudyReport& report,
                            const std::filesystem::path& path) {
  write_text_atomic(path, render_study_report_csv(report));
}

// ---------------------------------------------------------------------------
// Subject summaries
// ---------------------------------------------------------------------------

namespace {

json summary_to_json(const EtdrsSummary& summary) {
  json sectors;
  for (std::size_t s = 0; s < kNumSectors; ++s) {
    const auto v = summary.sectors[s];
    if (v)
      sectors[std::string(to_string(static_cast<Sector>(s)))] = *v;
    else
      sectors[std::string(to_string(static_cast<Sector>(s)))] = nullptr;
  }
  json j;
  j["aggregation"] = to_string(summary.aggregation);
  j["cs_excluded"] = summary.cs_excluded;
  j["sectors"] = std::move(sectors);
  return j;
}

}  // namespace

std::string render_subject_summaries_json(
    const std::string& subject_id, Laterality laterality,
    std::span<const std::pair<int, EtdrsSummary>> summaries) {
  // A single layer renders flat; a multi-layer request wraps the entries in
  // a `summaries` array. Readers accept both shapes.
  if (summaries.size() == 1) {
    json j = summary_to_json(summaries[0].second);
    j["layer"] = LabelSchema::by_id(summaries[0].first).name;
    j["laterality"] = to_string(laterality);
    j["subject_id"] = subject_id;
    return j.dump(2) + "\n";
  }
  json j;
  j["subject_id"] = subject_id;
  j["laterality"] = to_string(laterality);
  json list = json::array();
  for (const auto& [class_id, summary] : summaries) {
    json entry = summary_to_json(summary);
    entry["layer"] = LabelSchema::by_id(class_id).name;
    list.push_back(std::move(entry));
  }
  j["summaries"] = std::move(list);
  return j.dump(2) + "\n";
}

void write_subject_summaries_json(
    const std::string& subject_id, Laterality laterality,
    std::span<const std::pair<int, EtdrsSummary>> summaries,
    const std::filesystem::path& path) {
  write_text_atomic(path,
                    render_subject_summaries_json(subject_id, laterality,
                                                  summaries));
}

MeasurementTable read_summaries_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    fail(ErrorCode::IoFailure, "'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  MeasurementTable table;
  for (const auto& path : files) {
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::exception& e) {
      fail(ErrorCode::HeaderParse,
           "'" + path.string() + "': " + std::string(e.what()));
    }
    const std::string subject_id =
        j.contains("subject_id") ? j["subject_id"].get<std::string>()
                                 : path.stem().string();
    auto& cells = table[subject_id];
    auto ingest = [&](const json& entry) {
      const std::string layer_name = entry.at("layer").get<std::string>();
      const auto* info = LabelSchema::find_by_name(layer_name);
      if (info == nullptr)
        fail(ErrorCode::UnknownClass,
             "'" + path.string() + "': unknown layer '" + layer_name + "'");
      const auto& sectors = entry.at("sectors");
      for (std::size_t s = 0; s < kNumSectors; ++s) {
        const std::string key(to_string(static_cast<Sector>(s)));
        if (!sectors.contains(key) || sectors[key].is_null()) continue;
        cells[CellKey{info->id, static_cast<int>(s)}] =
            sectors[key].get<double>();
      }
    };
    if (j.contains("summaries")) {
      for (const auto& entry : j["summaries"]) ingest(entry);
    } else if (j.contains("layer")) {
      ingest(j);
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// ETDRS SVG
// ---------------------------------------------------------------------------

namespace {

std::string fmt_sector_value(const std::optional<double>& v) {
  if (!v) return "--";
  char buf[64];
  if (*v == 0.0) return "0.0";
  if (std::abs(*v) >= 1e5)
    std::snprintf(buf, sizeof(buf), "%.4g", *v);
  else
    std::snprintf(buf, sizeof(buf), "%.1f", *v);
  return buf;
}

}  // namespace

std::string render_etdrs_svg(const EtdrsSummary& summary) {
  constexpr double kCx = 240.0, kCy = 260.0;
  constexpr double kPxPerMm = 60.0;
  const bool nasal_left = summary.laterality == Laterality::OD;

  // Label anchor offsets in mm (x right, y down; superior up).
  struct Pos {
    Sector sector;
    double x_mm, y_mm;
  };
  const double nx = nasal_left ? -1.0 : 1.0;  // unit step toward nasal
  const Pos positions[9] = {
      {Sector::CS, 0.0, 0.0},        {Sector::SI, 0.0, -1.0},
      {Sector::NI, nx * 1.0, 0.0},   {Sector::II, 0.0, 1.0},
      {Sector::TI, -nx * 1.0, 0.0},  {Sector::SO, 0.0, -2.25},
      {Sector::NO, nx * 2.25, 0.0},  {Sector::IO, 0.0, 2.25},
      {Sector::TO, -nx * 2.25, 0.0},
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" "
         "height=\"520\" viewBox=\"0 0 480 520\">\n";
  svg << "  <rect width=\"480\" height=\"520\" fill=\"white\"/>\n";
  svg << "  <text x=\"240\" y=\"28\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">ETDRS ("
      << to_string(summary.laterality) << ", " << to_string(summary.aggregation)
      << ")</text>\n";

  svg << "  <g stroke=\"#444444\" fill=\"none\" stroke-width=\"1.5\">\n";
  for (double r_mm : {0.5, 1.5, 3.0}) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "    <circle cx=\"%.1f\" cy=\"%.1f\" r=\"%.1f\"/>\n", kCx,
                  kCy, r_mm * kPxPerMm);
    svg << buf;
  }
  const double inner = 0.5 * kPxPerMm / std::sqrt(2.0);
  const double outer = 3.0 * kPxPerMm / std::sqrt(2.0);
  for (int sx : {-1, 1})
    for (int sy : {-1, 1}) {
      char buf[200];
      std::snprintf(buf, sizeof(buf),
                    "    <line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" "
                    "y2=\"%.2f\"/>\n",
                    kCx + sx * inner, kCy + sy * inner, kCx + sx * outer,
                    kCy + sy * outer);
      svg << buf;
    }
  svg << "  </g>\n";

  for (const Pos& pos : positions) {
    const double x = kCx + pos.x_mm * kPxPerMm;
    const double y = kCy + pos.y_mm * kPxPerMm;
    const auto value = summary.value(pos.sector);
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "  <text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
                  "font-family=\"sans-serif\" font-size=\"11\" "
                  "fill=\"#666666\">%s</text>\n",
                  x, y - 4.0, std::string(to_string(pos.sector)).c_str());
    svg << buf;
    std::snprintf(buf, sizeof(buf),
                  "  <text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
                  "font-family=\"sans-serif\" font-size=\"12\">%s</text>\n",
                  x, y + 10.0, fmt_sector_value(value).c_str());
    svg << buf;
  }
  if (summary.cs_excluded)
    svg << "  <text x=\"240\" y=\"508\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"11\" fill=\"#666666\">CS "
           "reported but excluded from layer analyses</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

void emit_etdrs_svg(const EtdrsSummary& summary,
                    const std::filesystem::path& path) {
  write_text_atomic(path, render_etdrs_svg(summary));
}

// ---------------------------------------------------------------------------
// Phantom spec JSON + motion sidecar
// ---------------------------------------------------------------------------

PhantomSpec phantom_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::HeaderParse, std::string("phantom spec: ") + e.what());
  }
  PhantomSpec spec;
  try {
    if (j.contains("dims"))
      spec.dims = {j["dims"][0].get<std::size_t>(),
                   j["dims"][1].get<std::size_t>(),
                   j["dims"][2].get<std::size_t>()};
    if (j.contains("spacing_um"))
      spec.spacing = {j["spacing_um"][0].get<double>(),
                      j["spacing_um"][1].get<double>(),
                      j["spacing_um"][2].get<double>()};
    if (j.contains("laterality"))
      spec.laterality =
          laterality_from_string(j["laterality"].get<std::string>());
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("speckle_sigma"))
      spec.speckle_sigma = j["speckle_sigma"].get<double>();
    if (j.contains("layers")) {
      for (const auto& layer : j["layers"]) {
        PhantomLayer l;
        const std::string name = layer.at("class").get<std::string>();
        const auto* info = LabelSchema::find_by_name(name);
        if (info == nullptr)
          fail(ErrorCode::UnknownClass, "unknown layer class '" + name + "'");
        l.class_id = info->id;
        l.nominal_um = layer.at("nominal_um").get<double>();
        if (layer.contains("undulation_amp_um"))
          l.undulation_amp_um = layer["undulation_amp_um"].get<double>();
        if (layer.contains("undulation_wavelength_um"))
          l.undulation_wavelength_um =
              layer["undulation_wavelength_um"].get<double>();
        if (layer.contains("undulation_wavelength_b_um"))
          l.undulation_wavelength_b_um =
              layer["undulation_wavelength_b_um"].get<double>();
        spec.layers.push_back(l);
      }
    }
    if (j.contains("fluids")) {
      for (const auto& fluid : j["fluids"]) {
        PhantomFluid f;
        f.center_b = fluid.at("center_px")[0].get<double>();
        f.center_z = fluid.at("center_px")[1].get<double>();
        f.center_x = fluid.at("center_px")[2].get<double>();
        f.semi_b = fluid.at("semi_px")[0].get<double>();
        f.semi_z = fluid.at("semi_px")[1].get<double>();
        f.semi_x = fluid.at("semi_px")[2].get<double>();
        if (fluid.contains("host")) {
          const std::string host = fluid["host"].get<std::string>();
          const auto* info = LabelSchema::find_by_name(host);
          if (info == nullptr)
            fail(ErrorCode::UnknownClass, "unknown host layer '" + host + "'");
          f.host_layer = info->id;
        }
        spec.fluids.push_back(f);
      }
    }
    if (j.contains("hrf")) {
      const auto& hrf = j["hrf"];
      spec.hrf.count = hrf.at("count").get<std::size_t>();
      if (hrf.contains("radius_px")) {
        spec.hrf.radius_min_px = hrf["radius_px"][0].get<double>();
        spec.hrf.radius_max_px = hrf["radius_px"][1].get<double>();
      }
      if (hrf.contains("depth_frac")) {
        spec.hrf.depth_min_frac = hrf["depth_frac"][0].get<double>();
        spec.hrf.depth_max_frac = hrf["depth_frac"][1].get<double>();
      }
    }
    if (j.contains("motion")) {
      const auto& motion = j["motion"];
      if (motion.contains("axial_px"))
        spec.motion.axial_px = motion["axial_px"].get<std::vector<double>>();
      if (motion.contains("lateral_px"))
        spec.motion.lateral_px =
            motion["lateral_px"].get<std::vector<double>>();
      if (motion.contains("rotation_deg"))
        spec.motion.rotation_deg =
            motion["rotation_deg"].get<std::vector<double>>();
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorCode::HeaderParse, std::string("phantom spec: ") + e.what());
  }
  return spec;
}

PhantomSpec read_phantom_spec(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    fail(ErrorCode::IoFailure, "no such file: '" + path.string() + "'");
  return phantom_spec_from_json(read_file(path));
}

std::string render_motion_json(const std::vector<double>& axial,
                               const std::vector<double>& lateral,
                               const std::vector<double>& rotation,
                               const std::vector<std::uint8_t>& flat_flags) {
  json j;
  j["axial_shift_px"] = axial;
  j["lateral_shift_px"] = lateral;
  j["rotation_deg"] = rotation;
  json flat = json::array();
  for (auto f : flat_flags) flat.push_back(f != 0);
  j["flat_spectrum"] = std::move(flat);
  return j.dump(2) + "\n";
}

}  // namespace octquant
