#include "octquant/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "octquant/parallel.hpp"
#include "octquant/preprocess.hpp"
#include "octquant/rng.hpp"

namespace octquant {

namespace {

// Reflectivity of each class before speckle.
constexpr std::array<double, LabelSchema::kNumClasses> kBaseIntensity = {
    0.05,  // Vitreous
    0.75,  // RNFL
    0.45,  // GCL+IPL
    0.35,  // INL
    0.55,  // OPL
    0.25,  // ONL+IS
    0.85,  // EZ
    0.40,  // OS
    0.90,  // RPE
    0.30,  // Choroid
    0.08,  // Fluid
    0.95,  // HRF
};

struct BoundaryField {
  // Boundary row per (boundary index, b, x); kNumBoundaries = layers + 1.
  std::size_t n_boundaries = 0;
  Dims dims;
  std::vector<long> rows;

  long at(std::size_t k, std::size_t b, std::size_t x) const {
    return rows[(k * dims.bscans + b) * dims.ascans + x];
  }
};

}  // namespace

std::vector<PhantomLayer> default_phantom_layers() {
  return {
      {label::kRnfl, 40.0, 0.0, 1500.0},
      {label::kGclIpl, 80.0, 0.0, 1500.0},
      {label::kInl, 40.0, 0.0, 1500.0},
      {label::kOpl, 32.0, 0.0, 1500.0},
      {label::kOnlIs, 88.0, 0.0, 1500.0},
      {label::kEz, 16.0, 0.0, 1500.0},
      {label::kOs, 24.0, 0.0, 1500.0},
      {label::kRpe, 28.0, 0.0, 1500.0},
  };
}

namespace {

BoundaryField build_boundaries(const PhantomSpec& spec,
                               const std::vector<PhantomLayer>& layers) {
  const Dims& d = spec.dims;
  const double axial = spec.spacing.axial_um;

  std::vector<std::size_t> spans(layers.size());
  std::size_t total_span = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!(layers[i].nominal_um > 0.0))
      fail(ErrorCode::SpecInfeasible, "layer thicknesses must be positive");
    spans[i] =
        static_cast<std::size_t>(std::lround(layers[i].nominal_um / axial)) +
        1;
    total_span += spans[i];
  }
  if (total_span + 2 > d.depth)
    fail(ErrorCode::SpecInfeasible,
         "layer stack (" + std::to_string(total_span) +
             " rows) does not fit within depth " + std::to_string(d.depth));

  const long top_base = static_cast<long>((d.depth - total_span) / 2);

  BoundaryField field;
  field.n_boundaries = layers.size() + 1;
  field.dims = d;
  field.rows.resize(field.n_boundaries * d.bscans * d.ascans);

  for (std::size_t k = 0; k < field.n_boundaries; ++k) {
    long cumulative = top_base;
    for (std::size_t j = 0; j < k; ++j)
      cumulative += static_cast<long>(spans[j]);
    // Boundary k undulates with the parameters of the layer below it.
    const PhantomLayer& ref = layers[std::min(k, layers.size() - 1)];
    const double amp_px = ref.undulation_amp_um / axial;
    const double wl_x = std::max(ref.undulation_wavelength_um, 1.0);
    const double wl_b = ref.undulation_wavelength_b_um;
    const double phase = 0.7 * static_cast<double>(k);

    for (std::size_t b = 0; b < d.bscans; ++b) {
      const double y_um = static_cast<double>(b) * spec.spacing.bscan_um;
      const double b_factor =
          wl_b > 0.0 ? std::cos(2.0 * std::numbers::pi * y_um / wl_b + phase)
                     : 1.0;
      for (std::size_t x = 0; x < d.ascans; ++x) {
        const double x_um = static_cast<double>(x) * spec.spacing.lateral_um;
        double offset = 0.0;
        if (amp_px != 0.0)
          offset = amp_px * b_factor *
                   std::sin(2.0 * std::numbers::pi * x_um / wl_x + phase);
        field.rows[(k * d.bscans + b) * d.ascans + x] =
            cumulative + static_cast<long>(std::lround(offset));
      }
    }
  }

  // Enforce monotone boundaries and the depth bounds.
  for (std::size_t b = 0; b < d.bscans; ++b)
    for (std::size_t x = 0; x < d.ascans; ++x) {
      long prev = -1;
      for (std::size_t k = 0; k < field.n_boundaries; ++k) {
        long& row = field.rows[(k * d.bscans + b) * d.ascans + x];
        row = std::max(row, prev + 1);
        prev = row;
      }
      const long last =
          field.rows[((field.n_boundaries - 1) * d.bscans + b) * d.ascans + x];
      if (field.at(0, b, x) < 1 || last > static_cast<long>(d.depth) - 1)
        fail(ErrorCode::SpecInfeasible,
             "undulation pushes the stack outside the volume depth");
    }
  return field;
}

}  // namespace

PhantomResult generate(const PhantomSpec& spec) {
  const Dims& d = spec.dims;
  if (!spec.spacing.valid())
    fail(ErrorCode::SpecInfeasible, "phantom spacing must be positive");
  const auto layers =
      spec.layers.empty() ? default_phantom_layers() : spec.layers;
  for (const auto& layer : layers) {
    const auto& info = LabelSchema::by_id(layer.class_id);
    if (!info.bounded || !info.is_layer)
      fail(ErrorCode::SpecInfeasible,
           std::string(info.name) + " cannot be stacked as a phantom layer");
  }

  const BoundaryField field = build_boundaries(spec, layers);
  const std::size_t plane = d.depth * d.ascans;

  // Labels from the boundary field.
  std::vector<std::uint8_t> labels(d.total(), label::kVitreous);
  parallel_for(d.bscans, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      for (std::size_t x = 0; x < d.ascans; ++x) {
        std::uint8_t* column = labels.data() + b * plane;
        for (std::size_t k = 0; k < layers.size(); ++k) {
          const long top = field.at(k, b, x);
          const long bottom = field.at(k + 1, b, x);  // exclusive
          for (long z = top; z < bottom; ++z)
            column[static_cast<std::size_t>(z) * d.ascans + x] =
                static_cast<std::uint8_t>(layers[k].class_id);
        }
        const long last = field.at(layers.size(), b, x);
        for (long z = last; z < static_cast<long>(d.depth); ++z)
          column[static_cast<std::size_t>(z) * d.ascans + x] = label::kChoroid;
      }
    }
  });

  // Fluid pockets carved where the host layer is present.
  for (const PhantomFluid& fluid : spec.fluids) {
    LabelSchema::by_id(fluid.host_layer);
    const long b_lo = std::max(0L, static_cast<long>(
                                       std::floor(fluid.center_b - fluid.semi_b)));
    const long b_hi = std::min(static_cast<long>(d.bscans) - 1,
                               static_cast<long>(
                                   std::ceil(fluid.center_b + fluid.semi_b)));
    for (long b = b_lo; b <= b_hi; ++b) {
      const double nb = (static_cast<double>(b) - fluid.center_b) / fluid.semi_b;
      for (long z = 0; z < static_cast<long>(d.depth); ++z) {
        const double nz =
            (static_cast<double>(z) - fluid.center_z) / fluid.semi_z;
        if (nb * nb + nz * nz > 1.0) continue;
        for (long x = 0; x < static_cast<long>(d.ascans); ++x) {
          const double nx =
              (static_cast<double>(x) - fluid.center_x) / fluid.semi_x;
          if (nb * nb + nz * nz + nx * nx > 1.0) continue;
          std::uint8_t& v =
              labels[(static_cast<std::size_t>(b) * d.depth + z) * d.ascans +
                     x];
          if (v == fluid.host_layer) v = label::kFluid;
        }
      }
    }
  }

  // HRF dots: 2D disks inside bounded layers, one B-scan each.
  if (spec.hrf.count > 0) {
    Rng rng = Rng::stream(spec.seed, 104729);  // dots placed serially
    for (std::size_t dot = 0; dot < spec.hrf.count; ++dot) {
      const std::size_t b = rng.below(d.bscans);
      const std::size_t x = rng.below(d.ascans);
      const long top = field.at(0, b, x);
      const long bottom = field.at(layers.size(), b, x) - 1;
      const double depth_span = static_cast<double>(bottom - top);
      const double frac = spec.hrf.depth_min_frac +
                          (spec.hrf.depth_max_frac - spec.hrf.depth_min_frac) *
                              rng.uniform();
      const long cz = top + static_cast<long>(std::lround(frac * depth_span));
      const double radius =
          spec.hrf.radius_min_px +
          (spec.hrf.radius_max_px - spec.hrf.radius_min_px) * rng.uniform();
      const long ir = static_cast<long>(std::ceil(radius));
      for (long z = cz - ir; z <= cz + ir; ++z) {
        if (z < 0 || z >= static_cast<long>(d.depth)) continue;
        for (long xx = static_cast<long>(x) - ir;
             xx <= static_cast<long>(x) + ir; ++xx) {
          if (xx < 0 || xx >= static_cast<long>(d.ascans)) continue;
          const double dz = static_cast<double>(z - cz);
          const double dx = static_cast<double>(xx - static_cast<long>(x));
          if (dz * dz + dx * dx > radius * radius) continue;
          std::uint8_t& v = labels[(b * d.depth + z) * d.ascans + xx];
          if (v >= label::kRnfl && v <= label::kRpe)
            v = label::kHrf;
        }
      }
    }
  }

  // Render intensities with multiplicative log-normal speckle, one RNG
  // stream per B-scan so scheduling cannot change the output.
  std::vector<float> voxels(d.total());
  const double sigma = spec.speckle_sigma;
  parallel_for(d.bscans, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      Rng rng = Rng::stream(spec.seed, b + 1);
      for (std::size_t i = 0; i < plane; ++i) {
        const double base = kBaseIntensity[labels[b * plane + i]];
        double v = base;
        if (sigma > 0.0)
          v = base * std::exp(sigma * rng.normal() - sigma * sigma / 2.0);
        voxels[b * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  });

  // Ground truth from the finished (pre-motion) mask.
  GroundTruthTables truth;
  {
    const double axial = spec.spacing.axial_um;
    const double vv = spec.spacing.voxel_volume_um3();
    for (const auto& layer : layers) {
      EnFaceGrid grid(d.bscans, d.ascans);
      for (std::size_t b = 0; b < d.bscans; ++b)
        for (std::size_t x = 0; x < d.ascans; ++x) {
          long top = -1, bottom = -1;
          for (std::size_t z = 0; z < d.depth; ++z) {
            if (labels[(b * d.depth + z) * d.ascans + x] == layer.class_id) {
              if (top < 0) top = static_cast<long>(z);
              bottom = static_cast<long>(z);
            }
          }
          if (top >= 0)
            grid.set(b, x, static_cast<double>(bottom - top) * axial);
        }
      truth.layer_thickness_um[layer.class_id] = std::move(grid);
    }

    std::array<std::uint64_t, LabelSchema::kNumClasses> counts{};
    for (std::uint8_t v : labels) ++counts[v];
    for (int c = 0; c < LabelSchema::kNumClasses; ++c)
      truth.class_volume_um3[c] = static_cast<double>(counts[c]) * vv;

    // Sector summaries by brute-force classification of raw columns.
    const double fov_x = 6.0, fov_y = 6.0;
    auto summarize = [&](const EnFaceGrid& grid, MapSemantics aggregation) {
      std::array<std::vector<double>, kNumSectors> cells;
      for (std::size_t b = 0; b < grid.rows; ++b) {
        const double dy = map_cell_offset_mm(b, grid.rows, fov_y);
        for (std::size_t x = 0; x < grid.cols; ++x) {
          if (!grid.present_at(b, x)) continue;
          const double dx = map_cell_offset_mm(x, grid.cols, fov_x);
          const auto sector = classify_etdrs_point(dx, dy, spec.laterality);
          if (!sector) continue;
          cells[static_cast<std::size_t>(*sector)].push_back(grid.at(b, x));
        }
      }
      EtdrsSummary summary;
      summary.laterality = spec.laterality;
      summary.aggregation = aggregation;
      summary.cs_excluded = aggregation == MapSemantics::Mean;
      for (std::size_t s = 0; s < kNumSectors; ++s) {
        if (cells[s].empty()) continue;
        const double sum = pairwise_sum(cells[s]);
        summary.sectors[s] = aggregation == MapSemantics::Mean
                                 ? sum / double(cells[s].size())
                                 : sum;
      }
      return summary;
    };
    for (const auto& [cid, grid] : truth.layer_thickness_um)
      truth.layer_sector_summary[cid] = summarize(grid, MapSemantics::Mean);
    for (int cid : {label::kFluid, label::kHrf}) {
      EnFaceGrid grid(d.bscans, d.ascans);
      for (std::size_t b = 0; b < d.bscans; ++b)
        for (std::size_t x = 0; x < d.ascans; ++x) {
          std::uint64_t count = 0;
          for (std::size_t z = 0; z < d.depth; ++z)
            if (labels[(b * d.depth + z) * d.ascans + x] == cid) ++count;
          grid.set(b, x, static_cast<double>(count) * vv);
        }
      truth.pathology_sector_summary[cid] =
          summarize(grid, MapSemantics::Sum);
    }
  }
  truth.injected_motion = spec.motion;

  // Inject motion after the truth snapshot; volume and mask get the same
  // geometric transform (bilinear vs nearest resampling).
  if (spec.motion.any()) {
    auto motion_at = [&](const std::vector<double>& xs, std::size_t b) {
      return b < xs.size() ? xs[b] : 0.0;
    };
    parallel_for(d.bscans, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        const double dz = motion_at(spec.motion.axial_px, b);
        const double dx = motion_at(spec.motion.lateral_px, b);
        const double rot = motion_at(spec.motion.rotation_deg, b);
        std::span<float> vox(voxels.data() + b * plane, plane);
        std::span<std::uint8_t> lab(labels.data() + b * plane, plane);
        if (dz != 0.0 || dx != 0.0) {
          const auto v2 = shift_plane(vox, d.depth, d.ascans, dz, dx);
          std::copy(v2.begin(), v2.end(), vox.begin());
          const auto l2 = shift_plane_nearest(lab, d.depth, d.ascans, dz, dx);
          std::copy(l2.begin(), l2.end(), lab.begin());
        }
        if (rot != 0.0) {
          const auto v2 = rotate_plane(vox, d.depth, d.ascans, rot);
          std::copy(v2.begin(), v2.end(), vox.begin());
          const auto l2 = rotate_plane_nearest(lab, d.depth, d.ascans, rot);
          std::copy(l2.begin(), l2.end(), lab.begin());
        }
      }
    });
  }

  return {Volume3D(d, spec.spacing, spec.laterality, std::move(voxels)),
          LabelMask(d, spec.spacing, spec.laterality, std::move(labels)),
          std::move(truth)};
}

PerturbMode perturb_mode_from_string(std::string_view text) {
  if (text == "dilate_class") return PerturbMode::DilateClass;
  if (text == "erode_class") return PerturbMode::ErodeClass;
  if (text == "shift_boundary") return PerturbMode::ShiftBoundary;
  if (text == "relabel_noise") return PerturbMode::RelabelNoise;
  fail(ErrorCode::UnknownMode,
       "unknown perturbation mode '" + std::string(text) + "'");
}

namespace {

// One in-plane 4-neighbourhood morphology step on the class.
void morph_step(std::vector<std::uint8_t>& labels, const Dims& d,
                int class_id, bool dilate) {
  const std::vector<std::uint8_t> prev = labels;
  const std::size_t plane = d.depth * d.ascans;
  parallel_for(d.bscans, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const std::uint8_t* src = prev.data() + b * plane;
      std::uint8_t* dst = labels.data() + b * plane;
      for (std::size_t z = 0; z < d.depth; ++z) {
        for (std::size_t x = 0; x < d.ascans; ++x) {
          const std::size_t i = z * d.ascans + x;
          const bool is_class = src[i] == class_id;
          std::array<int, 4> nb = {-1, -1, -1, -1};
          if (z > 0) nb[0] = src[i - d.ascans];
          if (z + 1 < d.depth) nb[1] = src[i + d.ascans];
          if (x > 0) nb[2] = src[i - 1];
          if (x + 1 < d.ascans) nb[3] = src[i + 1];

          if (dilate && !is_class) {
            for (int v : nb)
              if (v == class_id) {
                dst[i] = static_cast<std::uint8_t>(class_id);
                break;
              }
          } else if (!dilate && is_class) {
            // Boundary voxels take the most frequent different neighbour.
            std::array<int, LabelSchema::kNumClasses> votes{};
            bool boundary = false;
            for (int v : nb)
              if (v >= 0 && v != class_id) {
                boundary = true;
                ++votes[v];
              }
            if (boundary) {
              int best = 0;
              for (int c = 1; c < LabelSchema::kNumClasses; ++c)
                if (votes[c] > votes[best]) best = c;
              dst[i] = static_cast<std::uint8_t>(best);
            }
          }
        }
      }
    }
  });
}

}  // namespace

LabelMask perturb_mask(const LabelMask& mask, PerturbMode mode, int class_id,
                       int magnitude, std::uint64_t seed) {
  if (magnitude < 0)
    fail(ErrorCode::InvalidValue, "perturbation magnitude must be >= 0");
  const Dims d = mask.dims();
  std::vector<std::uint8_t> labels(mask.labels().begin(),
                                   mask.labels().end());
  if (magnitude == 0)
    return LabelMask(d, mask.spacing(), mask.laterality(), std::move(labels),
                     mask.field_of_view_mm());

  switch (mode) {
    case PerturbMode::DilateClass:
    case PerturbMode::ErodeClass: {
      LabelSchema::by_id(class_id);
      for (int step = 0; step < magnitude; ++step)
        morph_step(labels, d, class_id, mode == PerturbMode::DilateClass);
      break;
    }
    case PerturbMode::ShiftBoundary: {
      // Roll every column down by `magnitude`, replicating the top row so
      // all boundaries move together.
      const std::size_t plane = d.depth * d.ascans;
      parallel_for(d.bscans, [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
          std::uint8_t* dst = labels.data() + b * plane;
          const std::vector<std::uint8_t> src(dst, dst + plane);
          for (long z = static_cast<long>(d.depth) - 1; z >= 0; --z) {
            const long sz = std::max(z - magnitude, 0L);
            std::copy(src.begin() + sz * d.ascans,
                      src.begin() + (sz + 1) * d.ascans, dst + z * d.ascans);
          }
        }
      });
      break;
    }
    case PerturbMode::RelabelNoise: {
      const double prob = std::min(1.0, 0.01 * magnitude);
      const std::size_t plane = d.depth * d.ascans;
      parallel_for(d.bscans, [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
          Rng rng = Rng::stream(seed, b + 1);
          std::uint8_t* dst = labels.data() + b * plane;
          for (std::size_t i = 0; i < plane; ++i)
            if (rng.uniform() < prob)
              dst[i] = static_cast<std::uint8_t>(
                  rng.below(LabelSchema::kNumClasses));
        }
      });
      break;
    }
  }
  return LabelMask(d, mask.spacing(), mask.laterality(), std::move(labels),
                   mask.field_of_view_mm());
}

}  // namespace octquant
