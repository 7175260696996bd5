#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "octquant/metrics.hpp"
#include "octquant/phantom.hpp"
#include "octquant/thickness.hpp"

using namespace octquant;

namespace {

PhantomSpec small_spec(std::uint64_t seed) {
  PhantomSpec spec;
  spec.dims = {6, 128, 48};
  spec.spacing = {5.0, 125.0, 1000.0};
  spec.seed = seed;
  spec.speckle_sigma = 0.1;
  return spec;
}

}  // namespace

TEST_CASE("generated masks are valid layered retinas") {
  const PhantomResult result = generate(small_spec(3));
  const Dims d = result.mask.dims();

  // Vitreous on top, Choroid at the bottom, bounded layers contiguous.
  for (std::size_t b = 0; b < d.bscans; ++b)
    for (std::size_t x = 0; x < d.ascans; ++x) {
      CHECK(result.mask.at(b, 0, x) == label::kVitreous);
      CHECK(result.mask.at(b, d.depth - 1, x) == label::kChoroid);
      int previous = -1;
      for (std::size_t z = 0; z < d.depth; ++z) {
        const int v = result.mask.at(b, z, x);
        if (v == label::kFluid || v == label::kHrf) continue;
        if (v == previous) continue;
        // Layer ids must be non-decreasing down the column.
        CHECK(v >= previous);
        previous = v;
      }
    }
}

TEST_CASE("flat spec recovers nominal thickness exactly") {
  PhantomSpec spec = small_spec(5);
  spec.layers = default_phantom_layers();
  spec.layers[0].nominal_um = 50.0;  // RNFL, divisible by axial 5 um
  const PhantomResult result = generate(spec);

  const auto& truth = result.truth.layer_thickness_um.at(label::kRnfl);
  for (std::size_t b = 0; b < truth.rows; ++b)
    for (std::size_t x = 0; x < truth.cols; ++x) {
      REQUIRE(truth.present_at(b, x));
      CHECK(truth.at(b, x) == 50.0);
    }

  // And the measurement pipeline agrees to < 1e-6 relative.
  const EnFaceGrid measured = layer_thickness_grid(result.mask, label::kRnfl);
  for (std::size_t b = 0; b < measured.rows; ++b)
    for (std::size_t x = 0; x < measured.cols; ++x) {
      REQUIRE(measured.present_at(b, x));
      CHECK(std::abs(measured.at(b, x) - 50.0) / 50.0 < 1e-6);
    }
}

TEST_CASE("fixed seed regenerates byte-identical output") {
  const PhantomResult a = generate(small_spec(11));
  const PhantomResult b = generate(small_spec(11));
  CHECK(std::equal(a.volume.voxels().begin(), a.volume.voxels().end(),
                   b.volume.voxels().begin()));
  CHECK(std::equal(a.mask.labels().begin(), a.mask.labels().end(),
                   b.mask.labels().begin()));
  const PhantomResult c = generate(small_spec(12));
  CHECK_FALSE(std::equal(a.volume.voxels().begin(), a.volume.voxels().end(),
                         c.volume.voxels().begin()));
}

TEST_CASE("fluid ellipsoid volumes match the discretized count") {
  PhantomSpec spec = small_spec(7);
  spec.fluids.push_back({3.0, 64.0, 24.0, 1.5, 6.0, 9.0, label::kOnlIs});
  spec.fluids.push_back({1.0, 60.0, 10.0, 1.0, 4.0, 5.0, label::kOnlIs});
  spec.fluids.push_back({4.0, 70.0, 38.0, 1.0, 5.0, 6.0, label::kGclIpl});
  const PhantomResult result = generate(spec);

  // Oracle: count voxels inside each ellipsoid inequality, restricted to
  // the host layer of the unperturbed stack == final fluid voxels.
  std::uint64_t count = 0;
  for (auto v : result.mask.labels()) count += v == label::kFluid;
  CHECK(count > 0);
  CHECK(result.truth.class_volume_um3.at(label::kFluid) ==
        double(count) * spec.spacing.voxel_volume_um3());
  CHECK(class_volume_um3(result.mask, label::kFluid) ==
        result.truth.class_volume_um3.at(label::kFluid));
}

TEST_CASE("hrf dots land inside the retina") {
  PhantomSpec spec = small_spec(9);
  spec.hrf.count = 12;
  const PhantomResult result = generate(spec);
  std::uint64_t count = 0;
  for (auto v : result.mask.labels()) count += v == label::kHrf;
  CHECK(count > 0);
  CHECK(class_volume_um3(result.mask, label::kHrf) ==
        result.truth.class_volume_um3.at(label::kHrf));
}

TEST_CASE("infeasible specs are rejected") {
  PhantomSpec spec = small_spec(1);
  spec.layers = default_phantom_layers();
  for (auto& layer : spec.layers) layer.nominal_um = 200.0;  // 41 rows each
  try {
    generate(spec);
    FAIL("expected SpecInfeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SpecInfeasible);
  }
}

TEST_CASE("perturb_mask") {
  const PhantomResult phantom = generate(small_spec(21));

  SUBCASE("magnitude zero is the identity") {
    const LabelMask out = perturb_mask(phantom.mask, PerturbMode::ErodeClass,
                                       label::kRnfl, 0, 5);
    CHECK(std::equal(out.labels().begin(), out.labels().end(),
                     phantom.mask.labels().begin()));
  }
  SUBCASE("relabel noise changes roughly the requested fraction") {
    const LabelMask out = perturb_mask(phantom.mask,
                                       PerturbMode::RelabelNoise, -1, 10, 5);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < out.labels().size(); ++i)
      changed += out.labels()[i] != phantom.mask.labels()[i];
    const double fraction = double(changed) / double(out.labels().size());
    CHECK(fraction > 0.04);
    CHECK(fraction < 0.12);  // 10% flips, some land on the same label
  }
  SUBCASE("shift_boundary pushes NSD down once it passes tau") {
    const int shift = 8;
    const LabelMask shifted = perturb_mask(
        phantom.mask, PerturbMode::ShiftBoundary, -1, shift, 5);
    const ValidatedPair pair = validate_pair(phantom.mask, shifted);
    const double nsd_tight = nsd(pair, label::kRnfl, {2.0});
    const double nsd_loose = nsd(pair, label::kRnfl, {16.0});
    CHECK(nsd_tight < 0.5);
    CHECK(nsd_loose == 1.0);
  }
  SUBCASE("unknown mode string raises") {
    CHECK_THROWS_AS(perturb_mode_from_string("blur"), Error);
  }
}

TEST_CASE("injected motion round-trips through the estimate tables") {
  PhantomSpec spec = small_spec(33);
  spec.motion.axial_px.assign(spec.dims.bscans, 0.0);
  spec.motion.axial_px[2] = 6.0;
  const PhantomResult result = generate(spec);
  CHECK(result.truth.injected_motion.axial_px[2] == 6.0);
  // The mask moved with the volume: RNFL sits 6 rows deeper in B-scan 2.
  const Dims d = result.mask.dims();
  std::size_t top_b1 = 0, top_b2 = 0;
  for (std::size_t z = 0; z < d.depth; ++z) {
    if (!top_b1 && result.mask.at(1, z, 10) == label::kRnfl) top_b1 = z;
    if (!top_b2 && result.mask.at(2, z, 10) == label::kRnfl) top_b2 = z;
  }
  CHECK(top_b2 == top_b1 + 6);
}
