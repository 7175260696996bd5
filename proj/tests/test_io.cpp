#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "octquant/io.hpp"
#include "octquant/rng.hpp"

using namespace octquant;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("octquant_io_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path operator/(const char* name) const { return path / name; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Volume3D random_volume(Dims dims, std::uint64_t seed, bool quantized_u8) {
  Rng rng(seed);
  std::vector<float> voxels(dims.total());
  for (auto& v : voxels) {
    if (quantized_u8)
      v = float(rng.below(256)) / 255.0f;
    else
      v = float(rng.uniform());
  }
  return Volume3D(dims, {3.0, 11.0, 90.0}, Laterality::OS, std::move(voxels));
}

LabelMask random_mask(Dims dims, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> labels(dims.total());
  for (auto& v : labels) v = std::uint8_t(rng.below(12));
  return LabelMask(dims, {2.0, 12.0, 17.0}, Laterality::OD,
                   std::move(labels));
}

}  // namespace

TEST_CASE("octb volume round trip is the identity") {
  TempDir dir;
  const auto path = dir / "v.octb";

  SUBCASE("f32") {
    const Volume3D v = random_volume({2, 16, 16}, 3, false);
    write_octb(v, path);
    const Volume3D back = read_volume(path);
    CHECK(back.dims() == v.dims());
    CHECK(back.spacing() == v.spacing());
    CHECK(back.laterality() == v.laterality());
    CHECK(std::equal(back.voxels().begin(), back.voxels().end(),
                     v.voxels().begin()));
  }
  SUBCASE("u8 with quantized data") {
    const Volume3D v = random_volume({2, 16, 16}, 4, true);
    write_octb(v, path, VoxelDtype::U8);
    const Volume3D back = read_volume(path);
    for (std::size_t i = 0; i < v.voxels().size(); ++i)
      CHECK(back.voxels()[i] == doctest::Approx(v.voxels()[i]).epsilon(1e-6));
    // A second write of the re-read object is byte-identical.
    const auto path2 = dir / "v2.octb";
    write_octb(back, path2, VoxelDtype::U8);
    CHECK(slurp(path) == slurp(path2));
  }
  SUBCASE("property: random dims and dtypes round trip") {
    Rng rng(99);
    for (int trial = 0; trial < 12; ++trial) {
      const Dims dims{1 + rng.below(3), 16 + rng.below(17),
                      16 + rng.below(9)};
      const Volume3D v = random_volume(dims, 1000 + trial, true);
      const VoxelDtype dtype = trial % 3 == 0   ? VoxelDtype::U8
                               : trial % 3 == 1 ? VoxelDtype::U16
                                                : VoxelDtype::F32;
      write_octb(v, path, dtype);
      const Volume3D back = read_volume(path);
      REQUIRE(back.dims() == v.dims());
      for (std::size_t i = 0; i < v.voxels().size(); ++i)
        CHECK(std::abs(back.voxels()[i] - v.voxels()[i]) < 1.0 / 255.0);
    }
  }
}

TEST_CASE("octb mask round trip preserves every voxel") {
  TempDir dir;
  const auto path = dir / "m.octb";
  const LabelMask m = random_mask({3, 20, 18}, 5);
  write_octb(m, path);
  const LabelMask back = read_mask(path);
  CHECK(back.dims() == m.dims());
  CHECK(std::equal(back.labels().begin(), back.labels().end(),
                   m.labels().begin()));
}

TEST_CASE("octb writes are deterministic") {
  TempDir dir;
  const Volume3D v = random_volume({2, 16, 16}, 8, false);
  write_octb(v, dir / "a.octb");
  write_octb(v, dir / "b.octb");
  CHECK(slurp(dir / "a.octb") == slurp(dir / "b.octb"));
}

TEST_CASE("octb payload sizes are exact") {
  TempDir dir;
  // (2,16,16) f32 volume: payload must be exactly 2*16*16*4 bytes.
  const Volume3D v = random_volume({2, 16, 16}, 9, false);
  write_octb(v, dir / "v.octb");
  const std::string bytes = slurp(dir / "v.octb");
  const std::uint32_t header_len =
      std::uint32_t(std::uint8_t(bytes[4])) |
      (std::uint32_t(std::uint8_t(bytes[5])) << 8) |
      (std::uint32_t(std::uint8_t(bytes[6])) << 16) |
      (std::uint32_t(std::uint8_t(bytes[7])) << 24);
  CHECK(bytes.size() - 8 - header_len == 2 * 16 * 16 * 4);
}

TEST_CASE("octb error paths") {
  TempDir dir;

  SUBCASE("bad magic") {
    const auto path = dir / "bad.octb";
    std::ofstream(path, std::ios::binary) << "OCTAxxxxxxxxxxxx";
    try {
      read_octb(path);
      FAIL("expected BadMagic");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadMagic);
    }
  }
  SUBCASE("truncated payload") {
    const auto path = dir / "trunc.octb";
    const Volume3D v = random_volume({2, 16, 16}, 10, false);
    write_octb(v, path);
    std::string bytes = slurp(path);
    bytes.resize(bytes.size() - 5);
    std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
    try {
      read_octb(path);
      FAIL("expected TruncatedPayload");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::TruncatedPayload);
    }
  }
  SUBCASE("illegal label value") {
    // Mask payload containing 12 must be rejected.
    const auto path = dir / "label.octb";
    const LabelMask m = random_mask({1, 16, 16}, 11);
    write_octb(m, path);
    std::string bytes = slurp(path);
    bytes[bytes.size() - 1] = 12;
    std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
    try {
      read_octb(path);
      FAIL("expected IllegalLabelValue");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::IllegalLabelValue);
    }
  }
  SUBCASE("header garbage") {
    const auto path = dir / "hdr.octb";
    std::string bytes = "OCTB";
    bytes += std::string("\x04\x00\x00\x00", 4);
    bytes += "nope";
    std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
    try {
      read_octb(path);
      FAIL("expected HeaderParse");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::HeaderParse);
    }
  }
}

TEST_CASE("thickness map round trip keeps missing cells") {
  TempDir dir;
  ThicknessMap map;
  map.semantics = MapSemantics::Sum;
  map.laterality = Laterality::OS;
  Rng rng(17);
  for (std::size_t i = 0; i < map.grid.values.size(); ++i) {
    if (rng.uniform() < 0.25) continue;  // leave missing
    map.grid.values[i] = rng.uniform() * 100.0;
    map.grid.present[i] = 1;
  }
  const auto path = dir / "map.octb";
  write_octb(map, path);
  const ThicknessMap back = read_map(path);
  CHECK(back.semantics == MapSemantics::Sum);
  CHECK(back.laterality == Laterality::OS);
  for (std::size_t i = 0; i < map.grid.values.size(); ++i) {
    CHECK(back.grid.present[i] == map.grid.present[i]);
    if (map.grid.present[i])
      CHECK(back.grid.values[i] ==
            doctest::Approx(map.grid.values[i]).epsilon(1e-6));
  }
}

TEST_CASE("cohort csv") {
  TempDir dir;
  const auto path = dir / "cohort.csv";

  SUBCASE("valid file parses") {
    std::ofstream(path) << "subject_id,group,age,gender,duration,va_logmar\n"
                           "s01,0,61.5,0,12.0,0.30\n"
                           "s02,1,55.0,1,9.5,0.52\n";
    const CohortTable table = read_cohort_csv(path);
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0].subject_id == "s01");
    CHECK(table.rows[0].group == 0);
    CHECK(table.rows[1].gender == 1);
    CHECK(table.find("s02") != nullptr);
    CHECK(table.find("s03") == nullptr);
  }
  SUBCASE("wrong header rejected") {
    std::ofstream(path) << "id,group,age,gender,duration,va\n";
    CHECK_THROWS_AS(read_cohort_csv(path), Error);
  }
  SUBCASE("duplicate subject rejected") {
    std::ofstream(path) << "subject_id,group,age,gender,duration,va_logmar\n"
                           "s01,0,61.5,0,12.0,0.30\n"
                           "s01,1,55.0,1,9.5,0.52\n";
    CHECK_THROWS_AS(read_cohort_csv(path), Error);
  }
  SUBCASE("group outside {0,1} rejected") {
    std::ofstream(path) << "subject_id,group,age,gender,duration,va_logmar\n"
                           "s01,2,61.5,0,12.0,0.30\n";
    CHECK_THROWS_AS(read_cohort_csv(path), Error);
  }
}

TEST_CASE("etdrs svg rendering") {
  EtdrsSummary summary;
  summary.laterality = Laterality::OD;
  summary.aggregation = MapSemantics::Mean;
  for (std::size_t s = 0; s < kNumSectors; ++s)
    summary.sectors[s] = 0.0;

  SUBCASE("all-zero summary renders 0.0 in all nine sectors") {
    const std::string svg = render_etdrs_svg(summary);
    std::size_t count = 0, pos = 0;
    while ((pos = svg.find(">0.0<", pos)) != std::string::npos) {
      ++count;
      ++pos;
    }
    CHECK(count == 9);
  }
  SUBCASE("identical input gives identical bytes") {
    CHECK(render_etdrs_svg(summary) == render_etdrs_svg(summary));
  }
  SUBCASE("nasal side follows laterality") {
    // NI label lands on the left half for OD, right half for OS.
    summary.laterality = Laterality::OD;
    const std::string od = render_etdrs_svg(summary);
    summary.laterality = Laterality::OS;
    const std::string os = render_etdrs_svg(summary);

    auto ni_x = [](const std::string& svg) {
      const auto pos = svg.find(">NI<");
      REQUIRE(pos != std::string::npos);
      const auto x_pos = svg.rfind("x=\"", pos);
      return std::stod(svg.substr(x_pos + 3));
    };
    CHECK(ni_x(od) < 240.0);  // left of centre
    CHECK(ni_x(os) > 240.0);  // mirrored
  }
}

TEST_CASE("subject summaries round trip through a directory") {
  TempDir dir;
  EtdrsSummary summary;
  summary.laterality = Laterality::OD;
  summary.aggregation = MapSemantics::Mean;
  summary.sectors[int(Sector::SI)] = 123.5;
  summary.sectors[int(Sector::TO)] = 98.25;

  std::vector<std::pair<int, EtdrsSummary>> list = {{label::kRnfl, summary}};
  write_subject_summaries_json("subj7", Laterality::OD, list,
                               dir / "subj7.json");
  const MeasurementTable table = read_summaries_dir(dir.path);
  REQUIRE(table.count("subj7") == 1);
  const auto& cells = table.at("subj7");
  CHECK(cells.at({label::kRnfl, int(Sector::SI)}) == 123.5);
  CHECK(cells.at({label::kRnfl, int(Sector::TO)}) == 98.25);
  CHECK(cells.count({label::kRnfl, int(Sector::CS)}) == 0);  // null skipped
}
