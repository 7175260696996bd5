#include "octquant/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "octquant/core.hpp"
#include "octquant/io.hpp"
#include "octquant/losses.hpp"
#include "octquant/metrics.hpp"
#include "octquant/parallel.hpp"
#include "octquant/phantom.hpp"
#include "octquant/preprocess.hpp"
#include "octquant/stats.hpp"
#include "octquant/thickness.hpp"

namespace octquant::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// Exit code 1: the inputs were wrong; 2: processing failed midway.
int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoFailure:
    case ErrorCode::DegenerateBScan:
    case ErrorCode::FlatSpectrum:
    case ErrorCode::EmptySurface:
    case ErrorCode::SingularDesign:
    case ErrorCode::NonConvergence:
      return 2;
    default:
      return 1;
  }
}

void report_error(ErrorCode code, const std::string& message) {
  json j;
  j["error"] = std::string(to_string(code));
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

void require_input(const fs::path& path) {
  if (!fs::exists(path))
    fail(ErrorCode::BadArgument, "input file not found: '" + path.string() +
                                     "'");
}

std::string volume_id_from(const fs::path& path) {
  std::string stem = path.stem().string();
  for (const char* suffix : {".gt", ".pred"}) {
    if (stem.size() > std::strlen(suffix) &&
        stem.ends_with(suffix))
      stem.resize(stem.size() - std::strlen(suffix));
  }
  return stem;
}

std::pair<double, double> parse_center_mm(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos)
    fail(ErrorCode::BadArgument,
         "--center-mm expects 'x,y', got '" + text + "'");
  try {
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (...) {
    fail(ErrorCode::BadArgument,
         "--center-mm expects 'x,y', got '" + text + "'");
  }
}

// ---------------------------------------------------------------------------
// Subcommand drivers
// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string in_path, out_path, motion_json;
  double bv_lambda = 0.08;
  std::size_t bv_iters = 100;
  double bv_tol = 1e-4;
  std::size_t ma_window = 5;
  bool skip_bv = false;
  bool skip_motion = false;
};

void run_preprocess(const PreprocessArgs& args) {
  require_input(args.in_path);
  Volume3D volume = read_volume(args.in_path);

  auto centered = axial_center(volume);
  volume = std::move(centered.volume);

  if (!args.skip_bv) {
    BvParams params;
    params.lambda = args.bv_lambda;
    params.max_iters = args.bv_iters;
    params.tol = args.bv_tol;
    volume = bv_smooth(volume, params);
  }

  MotionEstimate estimate;
  estimate.axial_shift_px.assign(volume.dims().bscans, 0.0);
  estimate.lateral_shift_px.assign(volume.dims().bscans, 0.0);
  estimate.rotation_deg.assign(volume.dims().bscans, 0.0);
  estimate.flat_flags.assign(volume.dims().bscans, 0);
  if (!args.skip_motion) {
    auto corrected = motion_correct(volume, args.ma_window);
    volume = std::move(corrected.volume);
    estimate = std::move(corrected.estimate);
  }

  write_octb(volume, args.out_path);
  const std::string sidecar =
      args.motion_json.empty() ? args.out_path + ".motion.json"
                               : args.motion_json;
  write_text_atomic(sidecar,
                    render_motion_json(estimate.axial_shift_px,
                                       estimate.lateral_shift_px,
                                       estimate.rotation_deg,
                                       estimate.flat_flags));
}

struct EvaluateArgs {
  std::string gt_path, pred_path, out_path;
  double tau = 10.0;
  double cutoff = 0.2;
};

void run_evaluate(const EvaluateArgs& args) {
  require_input(args.gt_path);
  require_input(args.pred_path);
  const LabelMask gt = read_mask(args.gt_path);
  const LabelMask pred = read_mask(args.pred_path);
  const ValidatedPair pair = validate_pair(gt, pred);
  const auto rows = score_volume(volume_id_from(args.gt_path), pair,
                                 NsdConfig{args.tau}, args.cutoff);
  write_scores_csv(rows, args.out_path);
}

struct ThicknessArgs {
  std::string mask_path, layer = "all";
  std::string center_mm;
  std::string map_path, etdrs_path, svg_path;
  std::string subject_id;
};

void run_thickness(const ThicknessArgs& args) {
  require_input(args.mask_path);
  const LabelMask mask = read_mask(args.mask_path);

  double cx = 0.0, cy = 0.0;
  if (!args.center_mm.empty()) std::tie(cx, cy) = parse_center_mm(args.center_mm);

  std::vector<int> class_ids;
  if (args.layer == "all") {
    for (int c = label::kRnfl; c <= label::kRpe; ++c) class_ids.push_back(c);
    class_ids.push_back(label::kFluid);
    class_ids.push_back(label::kHrf);
    if (!args.map_path.empty() || !args.svg_path.empty())
      fail(ErrorCode::BadArgument,
           "--out/--svg need a single --layer, not 'all'");
  } else {
    const auto* info = LabelSchema::find_by_name(args.layer);
    if (info == nullptr)
      fail(ErrorCode::BadArgument, "unknown layer '" + args.layer + "'");
    class_ids.push_back(info->id);
  }

  std::vector<std::pair<int, EtdrsSummary>> summaries;
  for (int class_id : class_ids) {
    const auto& info = LabelSchema::by_id(class_id);
    const MapSemantics semantics =
        info.is_pathology ? MapSemantics::Sum : MapSemantics::Mean;
    const ThicknessMap map = info.is_pathology
                                 ? pathology_map(mask, class_id)
                                 : layer_thickness_map(mask, class_id);
    const EtdrsSummary summary =
        etdrs_summarize(map, cx, cy, mask.laterality(), semantics);
    summaries.emplace_back(class_id, summary);

    if (!args.map_path.empty()) write_octb(map, args.map_path);
    if (!args.svg_path.empty()) emit_etdrs_svg(summary, args.svg_path);
  }

  if (!args.etdrs_path.empty()) {
    const std::string subject_id =
        args.subject_id.empty() ? volume_id_from(args.mask_path)
                                : args.subject_id;
    write_subject_summaries_json(subject_id, mask.laterality(), summaries,
                                 args.etdrs_path);
  }
}

struct LossesArgs {
  std::string y_path, yhat_path, out_path;
  double alpha = 1.0, beta = 1.0, gamma = 1.0;
};

void run_losses(const LossesArgs& args) {
  require_input(args.y_path);
  require_input(args.yhat_path);
  const LabelMask y = read_mask(args.y_path);
  const LabelMask yhat = read_mask(args.yhat_path);
  LossConfig cfg;
  cfg.alpha = args.alpha;
  cfg.beta = args.beta;
  cfg.gamma = args.gamma;
  const LossBreakdown losses = total_loss(y, yhat, cfg);
  json j;
  j["dice"] = losses.dice;
  j["ce"] = losses.ce;
  j["texture"] = losses.texture;
  j["total"] = losses.total;
  const std::string text = j.dump(2) + "\n";
  if (args.out_path.empty())
    std::cout << text;
  else
    write_text_atomic(args.out_path, text);
}

struct StatsArgs {
  std::string mode;  // "group" or "va"
  std::string cohort_path, summaries_dir, out_path, csv_path;
  double tweedie_power = 1.5;
  int group = 0;
};

void run_stats(const StatsArgs& args) {
  require_input(args.cohort_path);
  const CohortTable cohort = read_cohort_csv(args.cohort_path);
  const MeasurementTable measurements = read_summaries_dir(args.summaries_dir);

  StudyReport report;
  if (args.mode == "group")
    report = run_group_study(cohort.rows, measurements, args.tweedie_power);
  else
    report = run_va_study(cohort.rows, measurements, args.group,
                          args.tweedie_power);

  write_study_report_json(report, args.out_path);
  if (!args.csv_path.empty()) write_study_report_csv(report, args.csv_path);
}

struct PhantomArgs {
  std::string spec_path, volume_path, mask_path, truth_path;
};

json truth_to_json(const GroundTruthTables& truth) {
  json j;
  json volumes;
  for (const auto& [class_id, volume] : truth.class_volume_um3)
    volumes[std::string(LabelSchema::by_id(class_id).name)] = volume;
  j["class_volume_um3"] = std::move(volumes);

  auto sectors_json = [](const EtdrsSummary& summary) {
    json out;
    for (std::size_t s = 0; s < kNumSectors; ++s) {
      const auto v = summary.sectors[s];
      const std::string key(to_string(static_cast<Sector>(s)));
      if (v)
        out[key] = *v;
      else
        out[key] = nullptr;
    }
    return out;
  };
  json layer_sectors;
  for (const auto& [class_id, summary] : truth.layer_sector_summary)
    layer_sectors[std::string(LabelSchema::by_id(class_id).name)] =
        sectors_json(summary);
  j["layer_sector_mean_um"] = std::move(layer_sectors);
  json pathology_sectors;
  for (const auto& [class_id, summary] : truth.pathology_sector_summary)
    pathology_sectors[std::string(LabelSchema::by_id(class_id).name)] =
        sectors_json(summary);
  j["pathology_sector_sum_um3"] = std::move(pathology_sectors);

  json motion;
  motion["axial_px"] = truth.injected_motion.axial_px;
  motion["lateral_px"] = truth.injected_motion.lateral_px;
  motion["rotation_deg"] = truth.injected_motion.rotation_deg;
  j["injected_motion"] = std::move(motion);
  return j;
}

void run_phantom(const PhantomArgs& args) {
  require_input(args.spec_path);
  const PhantomSpec spec = read_phantom_spec(args.spec_path);
  PhantomResult result = generate(spec);
  write_octb(result.volume, args.volume_path);
  write_octb(result.mask, args.mask_path);
  if (!args.truth_path.empty())
    write_text_atomic(args.truth_path,
                      truth_to_json(result.truth).dump(2) + "\n");
}

bool g_quiet = false;

struct BatchArgs {
  std::string dir, out_path, manifest_path;
  std::string command = "evaluate";
  double tau = 10.0;
  double cutoff = 0.2;
};

int run_batch(const BatchArgs& args) {
  if (args.command != "evaluate")
    fail(ErrorCode::BadArgument,
         "batch supports --command evaluate (got '" + args.command + "')");
  if (!fs::is_directory(args.dir))
    fail(ErrorCode::BadArgument,
         "'" + args.dir + "' is not a directory");

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(args.dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".gt.octb";
    if (name.size() > suffix.size() && name.ends_with(suffix))
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty())
    fail(ErrorCode::EmptyBatch,
         "no '{id}.gt.octb' files in '" + args.dir + "'");

  std::vector<VolumeClassScores> aggregate;
  json manifest = json::array();
  std::size_t failures = 0;
  for (const std::string& id : ids) {
    const fs::path gt_path = fs::path(args.dir) / (id + ".gt.octb");
    const fs::path pred_path = fs::path(args.dir) / (id + ".pred.octb");
    try {
      require_input(pred_path);
      const LabelMask gt = read_mask(gt_path);
      const LabelMask pred = read_mask(pred_path);
      const ValidatedPair pair = validate_pair(gt, pred);
      const auto rows =
          score_volume(id, pair, NsdConfig{args.tau}, args.cutoff);
      aggregate.insert(aggregate.end(), rows.begin(), rows.end());
    } catch (const Error& e) {
      ++failures;
      json entry;
      entry["id"] = id;
      entry["error"] = std::string(to_string(e.code()));
      entry["message"] = e.what();
      manifest.push_back(std::move(entry));
    }
  }

  write_scores_csv(aggregate, args.out_path);
  if (!args.manifest_path.empty())
    write_text_atomic(args.manifest_path, manifest.dump(2) + "\n");
  if (failures > 0 && !g_quiet)
    std::cerr << "batch: " << failures << " of " << ids.size()
              << " pairs failed (see manifest)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Config file: JSON object of long-option -> value, merged under CLI flags.
// ---------------------------------------------------------------------------

std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string config_path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size())
        fail(ErrorCode::BadArgument, "--config needs a file path");
      config_path = args[++i];
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_path.empty()) return rest;

  require_input(config_path);
  json j;
  try {
    std::ifstream in(config_path);
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorCode::BadArgument,
         "config '" + config_path + "': " + std::string(e.what()));
  }
  if (!j.is_object())
    fail(ErrorCode::BadArgument, "config must be a JSON object");

  // Inject config pairs right after the subcommand name (global flags may
  // precede it); explicit flags appear later and win through take-last
  // parsing.
  static const std::vector<std::string> kCommands = {
      "preprocess", "evaluate", "thickness", "losses",
      "stats",      "phantom",  "batch"};
  std::size_t insert_at = rest.size();
  for (std::size_t i = 0; i < rest.size(); ++i) {
    if (std::find(kCommands.begin(), kCommands.end(), rest[i]) !=
        kCommands.end()) {
      insert_at = i + 1;
      break;
    }
  }
  std::vector<std::string> merged;
  merged.insert(merged.end(), rest.begin(), rest.begin() + insert_at);
  for (const auto& [key, value] : j.items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) merged.push_back("--" + key);
      continue;
    }
    merged.push_back("--" + key);
    if (value.is_string())
      merged.push_back(value.get<std::string>());
    else
      merged.push_back(value.dump());
  }
  merged.insert(merged.end(), rest.begin() + insert_at, rest.end());
  return merged;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"OCT segmentation quantification toolkit"};
  app.set_version_flag("--version", kVersion);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  std::size_t threads = 0;
  app.add_option("--threads", threads,
                 "worker threads (default: OCT_QUANT_THREADS or hardware)");
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "quiet | info")
      ->check(CLI::IsMember({"quiet", "info"}));

  PreprocessArgs pre;
  auto* cmd_pre = app.add_subcommand("preprocess",
                                     "axial centering, BV smoothing, motion "
                                     "correction");
  cmd_pre->add_option("--in", pre.in_path, "input volume (.octb)")->required();
  cmd_pre->add_option("--out", pre.out_path, "output volume (.octb)")
      ->required();
  cmd_pre->add_option("--bv-lambda", pre.bv_lambda, "TV weight");
  cmd_pre->add_option("--bv-iters", pre.bv_iters, "max BV iterations");
  cmd_pre->add_option("--bv-tol", pre.bv_tol, "BV relative-change tolerance");
  cmd_pre->add_option("--ma-window", pre.ma_window,
                      "moving-average half-width for the reference");
  cmd_pre->add_flag("--skip-bv", pre.skip_bv, "skip BV smoothing");
  cmd_pre->add_flag("--skip-motion", pre.skip_motion,
                    "skip motion correction");
  cmd_pre->add_option("--motion-json", pre.motion_json,
                      "motion sidecar path (default <out>.motion.json)");

  EvaluateArgs eval;
  auto* cmd_eval =
      app.add_subcommand("evaluate", "score a prediction against ground truth");
  cmd_eval->add_option("--gt", eval.gt_path, "ground-truth mask")->required();
  cmd_eval->add_option("--pred", eval.pred_path, "predicted mask")->required();
  cmd_eval->add_option("--tau", eval.tau, "NSD tolerance in pixels");
  cmd_eval->add_option("--cutoff", eval.cutoff, "USS/OSS flag cutoff");
  cmd_eval->add_option("--out", eval.out_path, "scores CSV")->required();

  ThicknessArgs thick;
  auto* cmd_thick =
      app.add_subcommand("thickness", "thickness maps and ETDRS summaries");
  cmd_thick->add_option("--mask", thick.mask_path, "segmentation mask")
      ->required();
  cmd_thick->add_option("--layer", thick.layer,
                        "layer name (RNFL..RPE, Fluid, HRF) or 'all'");
  cmd_thick->add_option("--center-mm", thick.center_mm,
                        "foveal centre offset 'x,y' in mm");
  cmd_thick->add_option("--out", thick.map_path, "thickness map (.octb)");
  cmd_thick->add_option("--etdrs", thick.etdrs_path, "ETDRS summary JSON");
  cmd_thick->add_option("--svg", thick.svg_path, "ETDRS diagram SVG");
  cmd_thick->add_option("--subject-id", thick.subject_id,
                        "subject id for the summary JSON");

  LossesArgs loss;
  auto* cmd_loss =
      app.add_subcommand("losses", "reference loss evaluations");
  cmd_loss->add_option("--y", loss.y_path, "ground-truth mask")->required();
  cmd_loss->add_option("--yhat", loss.yhat_path, "predicted mask")->required();
  cmd_loss->add_option("--alpha", loss.alpha, "Dice weight");
  cmd_loss->add_option("--beta", loss.beta, "CE weight");
  cmd_loss->add_option("--gamma", loss.gamma, "texture weight");
  cmd_loss->add_option("--out", loss.out_path, "output JSON (default stdout)");

  StatsArgs stats;
  auto* cmd_stats =
      app.add_subcommand("stats", "group-comparison / visual-acuity studies");
  cmd_stats->add_option("mode", stats.mode, "'group' or 'va'")
      ->required()
      ->check(CLI::IsMember({"group", "va"}));
  cmd_stats->add_option("--cohort", stats.cohort_path, "cohort CSV")
      ->required();
  cmd_stats->add_option("--summaries", stats.summaries_dir,
                        "directory of per-subject summary JSONs")
      ->required();
  cmd_stats->add_option("--tweedie-power", stats.tweedie_power,
                        "variance power in (1, 2)");
  cmd_stats->add_option("--group", stats.group,
                        "group filter for the va study (0=NPDR, 1=PDR)");
  cmd_stats->add_option("--out", stats.out_path, "report JSON")->required();
  cmd_stats->add_option("--csv", stats.csv_path, "optional CSV flattening");

  PhantomArgs phantom;
  auto* cmd_phantom =
      app.add_subcommand("phantom", "generate a synthetic volume + mask");
  cmd_phantom->add_option("--spec", phantom.spec_path, "phantom spec JSON")
      ->required();
  cmd_phantom->add_option("--out-volume", phantom.volume_path, "volume path")
      ->required();
  cmd_phantom->add_option("--out-mask", phantom.mask_path, "mask path")
      ->required();
  cmd_phantom->add_option("--out-truth", phantom.truth_path,
                          "ground-truth tables JSON");

  BatchArgs batch;
  auto* cmd_batch = app.add_subcommand(
      "batch", "evaluate every {id}.gt.octb / {id}.pred.octb pair in a dir");
  cmd_batch->add_option("--dir", batch.dir, "input directory")->required();
  cmd_batch->add_option("--command", batch.command,
                        "per-pair command (evaluate)");
  cmd_batch->add_option("--out", batch.out_path, "aggregate scores CSV")
      ->required();
  cmd_batch->add_option("--manifest", batch.manifest_path,
                        "failure manifest JSON");
  cmd_batch->add_option("--tau", batch.tau, "NSD tolerance in pixels");
  cmd_batch->add_option("--cutoff", batch.cutoff, "USS/OSS flag cutoff");

  // Global flags may also appear after the subcommand name.
  for (CLI::App* sub : app.get_subcommands(nullptr)) sub->fallthrough();

  try {
    auto merged = merge_config(args);
    std::reverse(merged.begin(), merged.end());  // CLI11 takes reversed args
    try {
      app.parse(merged);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {  // --help / --version
        app.exit(e);
        return 0;
      }
      fail(ErrorCode::BadArgument, e.what());
    }
    if (threads > 0) set_worker_count(threads);
    g_quiet = log_level == "quiet";

    if (cmd_pre->parsed()) run_preprocess(pre);
    if (cmd_eval->parsed()) run_evaluate(eval);
    if (cmd_thick->parsed()) run_thickness(thick);
    if (cmd_loss->parsed()) run_losses(loss);
    if (cmd_stats->parsed()) run_stats(stats);
    if (cmd_phantom->parsed()) run_phantom(phantom);
    if (cmd_batch->parsed()) return run_batch(batch);
    return 0;
  } catch (const Error& e) {
    report_error(e.code(), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    report_error(ErrorCode::InvalidValue, e.what());
    return 2;
  }
}

}  // namespace octquant::cli
