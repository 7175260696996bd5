#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "octquant/phantom.hpp"
#include "octquant/preprocess.hpp"
#include "octquant/rng.hpp"

using namespace octquant;

namespace {

Volume3D band_volume(Dims dims, std::size_t band_top, std::size_t band_bottom,
                     float background = 0.1f, float band = 0.9f) {
  std::vector<float> voxels(dims.total(), background);
  for (std::size_t b = 0; b < dims.bscans; ++b)
    for (std::size_t z = band_top; z <= band_bottom; ++z)
      for (std::size_t x = 0; x < dims.ascans; ++x)
        voxels[(b * dims.depth + z) * dims.ascans + x] = band;
  return Volume3D(dims, {4.0, 12.0, 120.0}, Laterality::OD,
                  std::move(voxels));
}

Volume3D random_volume(Dims dims, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> voxels(dims.total());
  for (auto& v : voxels) v = float(rng.uniform());
  return Volume3D(dims, {4.0, 12.0, 120.0}, Laterality::OD,
                  std::move(voxels));
}

PhantomSpec motion_spec(std::uint64_t seed) {
  PhantomSpec spec;
  spec.dims = {12, 128, 64};
  spec.spacing = {5.0, 93.75, 750.0};
  spec.seed = seed;
  spec.speckle_sigma = 0.05;
  // Lateral structure (needed to observe lateral shifts), constant along B
  // so every B-scan shares the same anatomy.
  spec.layers = default_phantom_layers();
  spec.layers[1].undulation_amp_um = 15.0;
  spec.layers[1].undulation_wavelength_um = 1500.0;
  spec.layers[4].undulation_amp_um = 20.0;
  spec.layers[4].undulation_wavelength_um = 2400.0;
  return spec;
}

}  // namespace

TEST_CASE("axial_center") {
  const Dims dims{2, 32, 16};
  SUBCASE("bright band already centred gives offset 0") {
    // Band centred on depth/2 = 16.
    const Volume3D v = band_volume(dims, 14, 18);
    const AxialCenterResult result = axial_center(v);
    for (long off : result.offsets_px) CHECK(off == 0);
    CHECK(std::equal(result.volume.voxels().begin(),
                     result.volume.voxels().end(), v.voxels().begin()));
  }
  SUBCASE("band at depth/4 is shifted down by depth/4") {
    // Hand oracle on the 32-row synthetic: voxels above the 20th
    // percentile are exactly the band rows 6..10, mean row 8 = Z/4,
    // so the offset must be Z/2 - Z/4 = +8.
    const Volume3D v = band_volume(dims, 6, 10);
    const AxialCenterResult result = axial_center(v);
    for (long off : result.offsets_px) CHECK(off == 8);
    // Band content now sits at rows 14..18.
    CHECK(result.volume.at(0, 16, 5) == 0.9f);
    CHECK(result.volume.at(0, 8, 5) == 0.1f);
    CHECK(result.volume.at(0, 0, 5) == 0.0f);  // zero-filled top
  }
  SUBCASE("constant B-scan raises DegenerateBScan") {
    std::vector<float> voxels(dims.total(), 0.5f);
    const Volume3D v(dims, {4.0, 12.0, 120.0}, Laterality::OD,
                     std::move(voxels));
    try {
      axial_center(v);
      FAIL("expected DegenerateBScan");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateBScan);
    }
  }
  SUBCASE("idempotent within one pixel") {
    // Dark background, as on real scans; the first roll's zero fill then
    // stays below the 20th percentile.
    const Volume3D v = band_volume(dims, 5, 12, 0.0f, 0.9f);
    const AxialCenterResult first = axial_center(v);
    const AxialCenterResult second = axial_center(first.volume);
    for (long off : second.offsets_px) CHECK(std::abs(off) <= 1);

    PhantomSpec spec;
    spec.dims = {4, 128, 48};
    spec.spacing = {5.0, 125.0, 1500.0};
    spec.seed = 77;
    const PhantomResult phantom = generate(spec);
    const AxialCenterResult p1 = axial_center(phantom.volume);
    const AxialCenterResult p2 = axial_center(p1.volume);
    for (long off : p2.offsets_px) CHECK(std::abs(off) <= 1);
  }
}

TEST_CASE("bv_smooth") {
  const Dims dims{4, 24, 24};
  SUBCASE("lambda 0 is the exact identity") {
    const Volume3D v = random_volume(dims, 3);
    const Volume3D out = bv_smooth(v, {0.0, 100, 1e-4});
    CHECK(std::equal(out.voxels().begin(), out.voxels().end(),
                     v.voxels().begin()));
  }
  SUBCASE("TV never increases") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const Volume3D v = random_volume(dims, 100 + seed);
      const Volume3D out = bv_smooth(v, {0.08, 60, 1e-5});
      CHECK(discrete_total_variation(out) <=
            discrete_total_variation(v) + 1e-9);
    }
  }
  SUBCASE("two-region phantom keeps its contrast at default lambda") {
    // Left half 0.25, right half 0.75, plus noise.
    Rng rng(17);
    std::vector<float> voxels(dims.total());
    for (std::size_t b = 0; b < dims.bscans; ++b)
      for (std::size_t z = 0; z < dims.depth; ++z)
        for (std::size_t x = 0; x < dims.ascans; ++x) {
          const double base = x < dims.ascans / 2 ? 0.25 : 0.75;
          voxels[(b * dims.depth + z) * dims.ascans + x] = float(
              std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0));
        }
    const Volume3D v(dims, {4.0, 12.0, 120.0}, Laterality::OD,
                     std::move(voxels));
    const Volume3D out = bv_smooth(v, {});

    auto region_stats = [&](const Volume3D& vol, bool left) {
      double sum = 0.0, sum_sq = 0.0;
      std::size_t count = 0;
      for (std::size_t b = 0; b < dims.bscans; ++b)
        for (std::size_t z = 0; z < dims.depth; ++z)
          for (std::size_t x = 0; x < dims.ascans; ++x) {
            if ((x < dims.ascans / 2) != left) continue;
            const double val = vol.at(b, z, x);
            sum += val;
            sum_sq += val * val;
            ++count;
          }
      const double mean = sum / double(count);
      return std::pair{mean, sum_sq / double(count) - mean * mean};
    };
    const auto [mean_l_in, var_l_in] = region_stats(v, true);
    const auto [mean_r_in, var_r_in] = region_stats(v, false);
    const auto [mean_l_out, var_l_out] = region_stats(out, true);
    const auto [mean_r_out, var_r_out] = region_stats(out, false);

    CHECK(var_l_out < var_l_in);  // noise strictly reduced
    CHECK(var_r_out < var_r_in);
    const double contrast_in = mean_r_in - mean_l_in;
    const double contrast_out = mean_r_out - mean_l_out;
    CHECK(std::abs(contrast_out - contrast_in) / contrast_in < 0.05);
  }
}

TEST_CASE("shift and rotate primitives") {
  const std::size_t rows = 32, cols = 32;
  std::vector<float> plane(rows * cols, 0.0f);
  for (std::size_t r = 10; r < 20; ++r)
    for (std::size_t c = 12; c < 22; ++c) plane[r * cols + c] = 1.0f;

  SUBCASE("integer shifts relocate exactly") {
    const auto shifted = shift_plane(plane, rows, cols, 3.0, -2.0);
    CHECK(shifted[(13) * cols + 10] == 1.0f);
    CHECK(shifted[(9) * cols + 10] == 0.0f);
  }
  SUBCASE("zero shift and zero rotation are identities") {
    CHECK(shift_plane(plane, rows, cols, 0.0, 0.0) ==
          std::vector<float>(plane.begin(), plane.end()));
    CHECK(rotate_plane(plane, rows, cols, 0.0) ==
          std::vector<float>(plane.begin(), plane.end()));
  }
  SUBCASE("rotation by +deg then -deg restores the bulk") {
    const auto rotated = rotate_plane(plane, rows, cols, 10.0);
    const auto restored = rotate_plane(rotated, rows, cols, -10.0);
    double err = 0.0;
    for (std::size_t i = 0; i < plane.size(); ++i)
      err += std::abs(restored[i] - plane[i]);
    CHECK(err / double(plane.size()) < 0.02);  // interpolation losses only
  }
}

TEST_CASE("shift estimators") {
  const PhantomResult phantom = generate(motion_spec(40));
  const Dims d = phantom.volume.dims();
  const std::size_t plane = d.depth * d.ascans;

  std::vector<double> ref(plane);
  for (std::size_t i = 0; i < plane; ++i)
    ref[i] = phantom.volume.voxels()[3 * plane + i];
  const std::span<const float> scan(phantom.volume.voxels().data() + 3 * plane,
                                    plane);

  SUBCASE("identical scan and reference estimate zero") {
    const ShiftEstimate e =
        estimate_axial_shift(scan, ref, d.depth, d.ascans);
    CHECK_FALSE(e.flat);
    CHECK(e.value == 0.0);
  }
  SUBCASE("integer axial roll recovered exactly; equivariance holds") {
    for (double delta : {-9.0, -3.0, 4.0, 7.0}) {
      const auto rolled = shift_plane(scan, d.depth, d.ascans, delta, 0.0);
      const ShiftEstimate e =
          estimate_axial_shift(rolled, ref, d.depth, d.ascans);
      CHECK(e.value == delta);
    }
  }
  SUBCASE("subpixel lateral shift recovered within 0.25 px") {
    std::vector<float> base(scan.begin(), scan.end());
    const auto moved = shift_plane(base, d.depth, d.ascans, 0.0, 3.4);
    const PlaneShift e =
        estimate_plane_shift(moved, base, d.depth, d.ascans);
    CHECK_FALSE(e.flat);
    CHECK(std::abs(e.dx - 3.4) < 0.25);
    CHECK(std::abs(e.dz) < 0.25);
  }
  SUBCASE("constant planes flag a flat spectrum") {
    std::vector<float> flat_a(plane, 0.5f), flat_b(plane, 0.5f);
    const PlaneShift e =
        estimate_plane_shift(flat_a, flat_b, d.depth, d.ascans);
    CHECK(e.flat);
    CHECK(e.dx == 0.0);

    // Same for the pooled-correlation estimators: a featureless scan must
    // not pick up a spurious shift or rotation.
    std::vector<double> flat_ref(plane, 0.5);
    const ShiftEstimate axial =
        estimate_axial_shift(flat_a, flat_ref, d.depth, d.ascans);
    CHECK(axial.flat);
    CHECK(axial.value == 0.0);
    const ShiftEstimate rot =
        estimate_rotation_deg(flat_a, flat_ref, d.depth, d.ascans);
    CHECK(rot.flat);
    CHECK(rot.value == 0.0);
  }
  SUBCASE("rotation recovered within 0.5 degrees") {
    for (double deg : {-4.0, -1.5, 2.0, 3.5}) {
      const auto rotated = rotate_plane(scan, d.depth, d.ascans, deg);
      const ShiftEstimate e =
          estimate_rotation_deg(rotated, ref, d.depth, d.ascans);
      CHECK_FALSE(e.flat);
      CHECK(std::abs(e.value - deg) < 0.5);
    }
  }
}

TEST_CASE("motion_correct") {
  SUBCASE("motion-free volume passes through bit-exactly") {
    const PhantomResult phantom = generate(motion_spec(50));
    const MotionCorrectResult result = motion_correct(phantom.volume);
    for (std::size_t b = 0; b < phantom.volume.dims().bscans; ++b) {
      CHECK(result.estimate.axial_shift_px[b] == 0.0);
      CHECK(result.estimate.lateral_shift_px[b] == 0.0);
      CHECK(result.estimate.rotation_deg[b] == 0.0);
    }
    CHECK(std::equal(result.volume.voxels().begin(),
                     result.volume.voxels().end(),
                     phantom.volume.voxels().begin()));
  }
  SUBCASE("injected integer axial roll on one B-scan is undone exactly") {
    // Window half-width 2 -> reference scans 4..8; inject outside it.
    PhantomSpec spec = motion_spec(51);
    spec.motion.axial_px.assign(spec.dims.bscans, 0.0);
    spec.motion.axial_px[10] = 7.0;
    const PhantomResult phantom = generate(spec);
    const MotionCorrectResult result = motion_correct(phantom.volume, 2);
    CHECK(result.estimate.axial_shift_px[10] == -7.0);
    for (std::size_t b = 0; b < spec.dims.bscans; ++b)
      if (b != 10) CHECK(result.estimate.axial_shift_px[b] == 0.0);
  }
  SUBCASE("injected lateral shift is undone within 0.25 px") {
    PhantomSpec spec = motion_spec(52);
    spec.motion.lateral_px.assign(spec.dims.bscans, 0.0);
    spec.motion.lateral_px[9] = 3.4;
    const PhantomResult phantom = generate(spec);
    const MotionCorrectResult result = motion_correct(phantom.volume, 2);
    CHECK(std::abs(result.estimate.lateral_shift_px[9] + 3.4) < 0.25);
    for (std::size_t b = 0; b < spec.dims.bscans; ++b)
      if (b != 9) CHECK(std::abs(result.estimate.lateral_shift_px[b]) < 0.25);
  }
}
