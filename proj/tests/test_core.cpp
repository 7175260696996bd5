#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "octquant/core.hpp"
#include "octquant/rng.hpp"

using namespace octquant;

namespace {

LabelMask uniform_mask(Dims dims, std::uint8_t value,
                       VoxelSpacing spacing = {2.0, 12.0, 17.0},
                       Laterality lat = Laterality::OD) {
  return LabelMask(dims, spacing, lat,
                   std::vector<std::uint8_t>(dims.total(), value));
}

}  // namespace

TEST_CASE("label schema layout") {
  CHECK(LabelSchema::classes().size() == 12);
  int pathologies = 0, unbounded = 0;
  for (int id = 0; id < LabelSchema::kNumClasses; ++id) {
    const auto& info = LabelSchema::by_id(id);
    CHECK(info.id == id);  // contiguous ids
    if (info.is_pathology) ++pathologies;
    if (!info.bounded) ++unbounded;
    // name -> id -> name round trip
    const auto* found = LabelSchema::find_by_name(info.name);
    REQUIRE(found != nullptr);
    CHECK(found->id == id);
  }
  CHECK(pathologies == 2);
  CHECK(unbounded == 2);
  CHECK(LabelSchema::by_id(label::kFluid).is_pathology);
  CHECK(LabelSchema::by_id(label::kHrf).is_pathology);
  CHECK_FALSE(LabelSchema::by_id(label::kVitreous).bounded);
  CHECK_FALSE(LabelSchema::by_id(label::kChoroid).bounded);
  CHECK(LabelSchema::find_by_name("nope") == nullptr);
  CHECK_THROWS_AS(LabelSchema::by_id(12), Error);
}

TEST_CASE("validate_pair checks dims, spacing, laterality") {
  const Dims dims{4, 32, 32};
  const LabelMask a = uniform_mask(dims, 0);

  SUBCASE("identical masks validate") {
    const LabelMask b = uniform_mask(dims, 3);
    const ValidatedPair pair = validate_pair(a, b);
    CHECK(pair.gt == &a);
    CHECK(pair.pred == &b);
  }
  SUBCASE("dim mismatch") {
    const LabelMask b = uniform_mask({4, 32, 31}, 0);
    try {
      validate_pair(a, b);
      FAIL("expected DimMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimMismatch);
    }
  }
  SUBCASE("spacing mismatch of 0.1 um") {
    const LabelMask b = uniform_mask(dims, 0, {2.1, 12.0, 17.0});
    try {
      validate_pair(a, b);
      FAIL("expected SpacingMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SpacingMismatch);
    }
  }
  SUBCASE("laterality mismatch") {
    const LabelMask b =
        uniform_mask(dims, 0, {2.0, 12.0, 17.0}, Laterality::OS);
    try {
      validate_pair(a, b);
      FAIL("expected LateralityMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::LateralityMismatch);
    }
  }
  SUBCASE("success is symmetric") {
    const LabelMask b = uniform_mask(dims, 5);
    CHECK_NOTHROW(validate_pair(a, b));
    CHECK_NOTHROW(validate_pair(b, a));
    const LabelMask c = uniform_mask({4, 32, 31}, 0);
    CHECK_THROWS_AS(validate_pair(a, c), Error);
    CHECK_THROWS_AS(validate_pair(c, a), Error);
  }
}

TEST_CASE("class_volume_um3") {
  const Dims dims{2, 20, 20};
  const VoxelSpacing spacing{2.0, 12.0, 17.0};  // voxel volume 408 um^3

  SUBCASE("empty class scores zero") {
    const LabelMask mask = uniform_mask(dims, 0, spacing);
    CHECK(class_volume_um3(mask, label::kFluid) == 0.0);
  }
  SUBCASE("10 fluid voxels at (2,12,17) um") {
    std::vector<std::uint8_t> labels(dims.total(), 0);
    for (int i = 0; i < 10; ++i) labels[i] = label::kFluid;
    const LabelMask mask(dims, spacing, Laterality::OD, std::move(labels));
    CHECK(class_volume_um3(mask, label::kFluid) == 4080.0);
  }
  SUBCASE("all-Vitreous mask fills the volume") {
    const LabelMask mask = uniform_mask(dims, 0, spacing);
    CHECK(class_volume_um3(mask, 0) ==
          double(dims.total()) * spacing.voxel_volume_um3());
  }
  SUBCASE("unknown class") {
    const LabelMask mask = uniform_mask(dims, 0, spacing);
    CHECK_THROWS_AS(class_volume_um3(mask, 12), Error);
    CHECK_THROWS_AS(class_volume_um3(mask, -1), Error);
  }
  SUBCASE("class volumes partition the physical volume") {
    // Integral voxel volume makes every sum exact in double.
    Rng rng(11);
    std::vector<std::uint8_t> labels(dims.total());
    for (auto& v : labels)
      v = std::uint8_t(rng.below(LabelSchema::kNumClasses));
    const LabelMask mask(dims, spacing, Laterality::OD, std::move(labels));
    double sum = 0.0;
    for (int c = 0; c < LabelSchema::kNumClasses; ++c)
      sum += class_volume_um3(mask, c);
    CHECK(sum == double(dims.total()) * spacing.voxel_volume_um3());
  }
}

TEST_CASE("volume construction guards") {
  const VoxelSpacing spacing{2.0, 12.0, 17.0};
  CHECK_THROWS_AS(
      Volume3D({1, 8, 16}, spacing, Laterality::OD,
               std::vector<float>(8 * 16, 0.5f)),
      Error);  // depth below minimum
  CHECK_THROWS_AS(
      Volume3D({1, 16, 16}, spacing, Laterality::OD,
               std::vector<float>(10, 0.5f)),
      Error);  // voxel count mismatch
  CHECK_THROWS_AS(
      Volume3D({1, 16, 16}, spacing, Laterality::OD,
               std::vector<float>(16 * 16, 1.5f)),
      Error);  // out of [0,1]
  CHECK_THROWS_AS(
      Volume3D({1, 16, 16}, {0.0, 12.0, 17.0}, Laterality::OD,
               std::vector<float>(16 * 16, 0.5f)),
      Error);  // zero spacing
  CHECK_THROWS_AS(uniform_mask({1, 4, 4}, 12), Error);  // label out of range
}
