#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "posebench/bench.hpp"
#include "posebench/error.hpp"
#include "posebench/eval_nvs.hpp"
#include "posebench/eval_poses.hpp"
#include "posebench/image_io.hpp"
#include "posebench/mapping.hpp"
#include "posebench/matching.hpp"
#include "posebench/model_io.hpp"
#include "posebench/pairing.hpp"
#include "posebench/refine.hpp"
#include "posebench/synth.hpp"
#include "posebench/threads.hpp"

namespace fs = std::filesystem;
using namespace posebench;

namespace {

ModelFormat parse_format(const std::string& name) {
  if (name == "binary") return ModelFormat::kBinary;
  if (name == "text") return ModelFormat::kText;
  throw Error("unknown model format '" + name + "' (use text or binary)");
}

std::map<std::string, image_id_t> image_ids_by_name(const SparseModel& model) {
  std::map<std::string, image_id_t> ids;
  for (const auto& [id, image] : model.images) ids[image.name] = id;
  return ids;
}

std::string format_value(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.6f", v);
  return buffer;
}

// --- synth -------------------------------------------------------------

struct SynthArgs {
  std::string config_file;
  std::string out_dir;
  std::string format = "binary";
};

void cmd_synth(const SynthArgs& args) {
  const SynthConfig cfg = synth_config_from_json(load_json_file(args.config_file));
  const SynthScene scene = generate(cfg);
  const ModelFormat format = parse_format(args.format);

  const fs::path out(args.out_dir);
  write_model(scene.gt_model, out / "gt", format);

  // The initial estimate: perturbed poses, intrinsics, no points.
  SparseModel initial = scene.gt_model;
  initial.points.clear();
  for (auto& [id, image] : initial.images) image.observations.clear();
  perturb_poses(initial, cfg.rot_noise_deg, cfg.pos_noise_frac, cfg.seed);
  write_model(initial, out / "model", format);

  fs::create_directories(out / "features");
  for (const auto& [name, features] : scene.features) {
    write_features(features, out / "features" / (name + ".feat"));
  }
  std::cout << "synth: " << scene.gt_model.images.size() << " cameras, "
            << scene.gt_model.points.size() << " points, "
            << scene.features.size() << " feature files -> " << out.string()
            << "\n";
}

// --- select-pairs -------------------------------------------------------

struct SelectPairsArgs {
  std::string model_dir;
  int k_nearest = 50;
  double max_angle = 60.0;
  std::string out_file;
};

void cmd_select_pairs(const SelectPairsArgs& args) {
  const SparseModel model = read_model_auto(args.model_dir);
  PairSelectionOptions options;
  options.k_nearest = args.k_nearest;
  options.max_ray_angle_deg = args.max_angle;
  const PairList pairs = select_pairs(poses_from_model(model), options);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.out_file.empty()) {
    file.open(args.out_file);
    if (!file) throw IoError("cannot open " + args.out_file + " for writing");
    out = &file;
  }
  for (const auto& [a, b] : pairs.pairs) {
    *out << model.images.at(a).name << ' ' << model.images.at(b).name << '\n';
  }
}

// --- match ---------------------------------------------------------------

struct MatchArgs {
  std::string features_dir;
  std::string pairs_file;
  std::string model_dir;  // optional: enables epipolar verification
  double threshold_px = 8.0;
  double max_distance = -1.0;
  double ratio = -1.0;
  std::string out_file;
};

void cmd_match(const MatchArgs& args) {
  const auto features = read_feature_directory(args.features_dir);

  std::ifstream pairs_in(args.pairs_file);
  if (!pairs_in) throw IoError("cannot open " + args.pairs_file);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  while (std::getline(pairs_in, line)) {
    if (line.empty()) continue;
    std::istringstream stream(line);
    std::string a, b;
    if (!(stream >> a >> b)) throw IoError("malformed pair line '" + line + "'");
    pairs.emplace_back(a, b);
  }

  MatchOptions options;
  if (args.max_distance > 0.0) {
    options.max_distance = static_cast<float>(args.max_distance);
  }
  if (args.ratio > 0.0) options.ratio = static_cast<float>(args.ratio);

  const bool verify = !args.model_dir.empty();
  SparseModel model;
  std::map<std::string, image_id_t> ids;
  if (verify) {
    model = read_model_auto(args.model_dir);
    ids = image_ids_by_name(model);
  }

  std::vector<std::pair<std::pair<std::string, std::string>, std::vector<Match>>>
      blocks;
  for (const auto& [name_a, name_b] : pairs) {
    const auto fa = features.find(name_a);
    const auto fb = features.find(name_b);
    if (fa == features.end() || fb == features.end()) {
      throw Error("no features for pair " + name_a + " " + name_b);
    }
    std::vector<Match> matches = match_mnn(fa->second, fb->second, options);
    if (verify) {
      const auto ia = ids.find(name_a);
      const auto ib = ids.find(name_b);
      if (ia == ids.end() || ib == ids.end()) {
        throw Error("pair image missing from model: " + name_a + " " + name_b);
      }
      const ImageRecord& image_a = model.images.at(ia->second);
      const ImageRecord& image_b = model.images.at(ib->second);
      EpipolarResult result = verify_epipolar(
          matches, fa->second.keypoints, fb->second.keypoints,
          CameraModel::from_record(model.cameras.at(image_a.camera_id)),
          CameraModel::from_record(model.cameras.at(image_b.camera_id)),
          Pose::from_image(image_a), Pose::from_image(image_b),
          args.threshold_px);
      matches = std::move(result.inliers);
    }
    blocks.push_back({{name_a, name_b}, std::move(matches)});
  }
  write_match_dump(blocks, args.out_file);
  size_t total = 0;
  for (const auto& [names, matches] : blocks) total += matches.size();
  std::cout << "match: " << total << " matches over " << blocks.size()
            << " pairs -> " << args.out_file << "\n";
}

// --- triangulate ----------------------------------------------------------

struct TriangulateArgs {
  std::string model_dir;
  std::string features_dir;
  std::string matches_file;
  std::string out_dir;
  std::string format = "binary";
  double max_reproj_px = 4.0;
  double min_tri_angle_deg = 1.5;
  int min_track_len = 2;
};

void cmd_triangulate(const TriangulateArgs& args) {
  SparseModel model = read_model_auto(args.model_dir);
  const auto features = read_feature_directory(args.features_dir);

  model.points.clear();
  for (auto& [id, image] : model.images) {
    const auto fit = features.find(image.name);
    if (fit == features.end()) {
      throw Error("no feature set for image '" + image.name + "'");
    }
    image.observations.clear();
    for (const Eigen::Vector2d& kp : fit->second.keypoints) {
      image.observations.push_back({kp.x(), kp.y(), kNoPoint3D});
    }
  }

  const auto ids = image_ids_by_name(model);
  MatchGraph graph;
  for (auto& [names, matches] : read_match_dump(args.matches_file)) {
    const auto ia = ids.find(names.first);
    const auto ib = ids.find(names.second);
    if (ia == ids.end() || ib == ids.end()) {
      throw Error("match dump references unknown image " + names.first + " or " +
                  names.second);
    }
    graph.insert(ia->second, ib->second, std::move(matches));
  }

  TriangulationThresholds th;
  th.max_reproj_px = args.max_reproj_px;
  th.min_tri_angle_deg = args.min_tri_angle_deg;
  th.min_track_len = args.min_track_len;

  std::vector<Track> tracks = build_tracks(graph);
  const TriangulateTracksStats stats = triangulate_tracks(model, tracks, th);
  write_model(model, args.out_dir, parse_format(args.format));
  std::cout << "triangulate: " << stats.accepted << " points accepted, "
            << stats.rejected << " tracks rejected -> " << args.out_dir << "\n";
}

// --- refine ----------------------------------------------------------------

struct RefineArgs {
  std::string model_dir;
  std::string features_dir;
  std::string out_dir;
  std::string config_file;
  std::string format = "binary";
};

void cmd_refine(const RefineArgs& args) {
  RefineConfig cfg;
  if (!args.config_file.empty()) {
    cfg = refine_config_from_json(load_json_file(args.config_file));
  }
  const SparseModel initial = read_model_auto(args.model_dir);
  const auto features = read_feature_directory(args.features_dir);
  const RefineResult result = run_refinement(initial, features, cfg);

  const fs::path out(args.out_dir);
  write_model(result.model, out, parse_format(args.format));

  std::ofstream timings(out / "timings.csv");
  if (!timings) throw IoError("cannot write timings.csv");
  timings << "stage,seconds\n";
  for (const auto& [stage, seconds] : result.timings.stages) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.17g", seconds);
    timings << stage << ',' << buffer << '\n';
  }

  std::cout << "refine: " << result.model.points.size() << " points, "
            << result.trace.size() << " outer iterations, total "
            << format_value(result.timings.total) << " s\n";
  for (const RefineIterationTrace& t : result.trace) {
    std::cout << "  iter " << t.iteration << ": merged=" << t.merged
              << " added=" << t.added << " filtered=" << t.filtered
              << " mean_reproj=" << format_value(t.mean_reproj_px) << " px\n";
  }
}

// --- eval-poses --------------------------------------------------------------

struct EvalPosesArgs {
  std::string est_dir;
  std::string gt_dir;
  double rot_deg = 1.0;
  double pos = 0.05;
  std::string sweep;  // comma-separated position thresholds
  std::string out_file;
  std::string curve_file;
  bool use_ransac = false;
  bool scene_mean = false;
};

void cmd_eval_poses(const EvalPosesArgs& args) {
  const SparseModel est = read_model_auto(args.est_dir);
  const SparseModel gt = read_model_auto(args.gt_dir);

  std::vector<Eigen::Vector3d> est_centers, gt_centers;
  std::map<std::string, Eigen::Vector3d> est_by_name;
  for (const auto& [id, image] : est.images) {
    est_by_name[image.name] = Pose::from_image(image).center();
  }
  for (const auto& [id, image] : gt.images) {
    const auto it = est_by_name.find(image.name);
    if (it == est_by_name.end()) continue;
    est_centers.push_back(it->second);
    gt_centers.push_back(Pose::from_image(image).center());
  }
  if (est_centers.size() < 3) {
    throw Error("need at least 3 shared views to align");
  }

  SimilarityTransform transform;
  if (args.use_ransac) {
    transform = align_umeyama_ransac(est_centers, gt_centers,
                                     0.1 * scene_diameter(gt));
  } else {
    transform = align_umeyama(est_centers, gt_centers);
  }
  const PoseErrorReport report = pose_errors(est, gt, transform);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.out_file.empty()) {
    file.open(args.out_file);
    if (!file) throw IoError("cannot open " + args.out_file + " for writing");
    out = &file;
  }
  *out << "view,rot_err_deg,pos_err,registered\n";
  for (const ViewError& v : report.registered) {
    *out << v.name << ',' << v.rotation_error_deg << ',' << v.position_error
         << ",1\n";
  }
  for (const std::string& name : report.unregistered) {
    *out << name << ",inf,inf,0\n";
  }

  const AccuracyPooling pooling = args.scene_mean ? AccuracyPooling::kSceneMean
                                                  : AccuracyPooling::kPooledViews;
  const std::vector<PoseErrorReport> reports{report};
  std::cout << "accuracy(rot<" << args.rot_deg << " deg, pos<" << args.pos
            << ") = "
            << format_value(accuracy_at(reports, args.rot_deg, args.pos, pooling))
            << "% (" << report.registered.size() << "/" << report.total_views()
            << " registered)\n";

  if (!args.sweep.empty()) {
    std::vector<double> thresholds;
    std::stringstream stream(args.sweep);
    std::string token;
    while (std::getline(stream, token, ',')) thresholds.push_back(std::stod(token));
    const auto curve = accuracy_curve(reports, args.rot_deg, thresholds, pooling);
    std::vector<AccuracyRow> rows;
    for (const auto& [pos, pct] : curve) {
      rows.push_back({args.rot_deg, pos, pct});
    }
    if (args.curve_file.empty()) {
      std::cout << "rot_thresh_deg,pos_thresh,percentage\n";
      for (const AccuracyRow& r : rows) {
        std::cout << r.rot_thresh_deg << ',' << r.pos_thresh << ','
                  << r.percentage << '\n';
      }
    } else {
      write_accuracy_csv(rows, args.curve_file);
    }
  }
}

// --- eval-nvs -----------------------------------------------------------------

struct EvalNvsArgs {
  std::string renders_dir;
  std::string gt_dir;
  std::string scene;
  std::string split_file;
  std::string lpips_csv;
  std::string out_file;
  std::string summary_file;
  double inf_cap = 100.0;
};

void cmd_eval_nvs(const EvalNvsArgs& args) {
  const fs::path gt_dir(args.gt_dir);
  if (!fs::is_directory(gt_dir)) {
    throw IoError("ground-truth directory " + args.gt_dir + " does not exist");
  }

  std::vector<std::string> gt_names;
  for (const auto& entry : fs::directory_iterator(gt_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".ppm") {
      gt_names.push_back(entry.path().filename().string());
    }
  }
  if (gt_names.empty()) throw Error("no .png/.ppm images in " + args.gt_dir);

  SceneMetricSet set;
  set.scene = args.scene;
  if (!args.split_file.empty()) {
    std::ifstream split(args.split_file);
    if (!split) throw IoError("cannot open " + args.split_file);
    std::string name;
    while (std::getline(split, name)) {
      if (!name.empty()) set.expected_test_views.push_back(name);
    }
  } else {
    set.expected_test_views = default_test_split(gt_names);
  }
  if (set.expected_test_views.empty()) throw Error("empty test split");

  const fs::path renders_dir(args.renders_dir);
  bool any_render = false;
  if (fs::is_directory(renders_dir)) {
    for (const auto& entry : fs::directory_iterator(renders_dir)) {
      if (entry.is_regular_file()) {
        any_render = true;
        break;
      }
    }
  }
  set.render_failed = !any_render;

  if (!args.lpips_csv.empty()) {
    const auto table = read_metric_table(args.lpips_csv);
    const auto it = table.find(args.scene);
    if (it != table.end()) {
      for (const MetricRecord& r : it->second) {
        if (r.metric == "lpips") set.lpips_values[r.view] = r.value;
        if (r.metric == "psnr") set.psnr_values[r.view] = r.value;
        if (r.metric == "ssim") set.ssim_values[r.view] = r.value;
      }
    }
  }

  if (!set.render_failed) {
    for (const std::string& view : set.expected_test_views) {
      const fs::path gt_path = gt_dir / view;
      const fs::path render_path = renders_dir / view;
      if (!fs::exists(gt_path)) {
        throw IoError("ground-truth image missing: " + gt_path.string());
      }
      if (!fs::exists(render_path)) continue;  // missing view, penalized
      const ImageBuffer gt_image = read_image(gt_path);
      const ImageBuffer render = read_image(render_path);
      set.psnr_values[view] = psnr(render, gt_image);
      set.ssim_values[view] = ssim(render, gt_image);
    }
  }

  std::vector<MetricRecord> records;
  for (const auto& [view, value] : set.psnr_values) {
    records.push_back({set.scene, view, "psnr", value});
  }
  for (const auto& [view, value] : set.ssim_values) {
    records.push_back({set.scene, view, "ssim", value});
  }
  for (const auto& [view, value] : set.lpips_values) {
    records.push_back({set.scene, view, "lpips", value});
  }
  if (!args.out_file.empty()) write_metric_table(records, args.out_file);

  const SceneAggregate agg = aggregate_scene(set, args.inf_cap);
  std::cout << "scene=" << set.scene << " psnr_mean=" << format_value(agg.psnr_mean)
            << " ssim_mean=" << format_value(agg.ssim_mean) << " lpips_mean="
            << (agg.lpips_mean ? format_value(*agg.lpips_mean) : std::string("n/a"))
            << (set.render_failed ? " (render failed)" : "") << "\n";

  if (!args.summary_file.empty()) {
    std::vector<ScalarMetricRow> rows{{set.scene, "psnr", agg.psnr_mean},
                                      {set.scene, "ssim", agg.ssim_mean}};
    if (agg.lpips_mean) rows.push_back({set.scene, "lpips", *agg.lpips_mean});
    write_metrics_csv(rows, args.summary_file);
  }
}

// --- aggregate ----------------------------------------------------------------

struct AggregateArgs {
  std::string metrics_file;
  std::string out_file;
};

void cmd_aggregate(const AggregateArgs& args) {
  const auto rows = read_metrics_csv(args.metrics_file);
  if (rows.empty()) throw Error("no metric rows in " + args.metrics_file);
  std::map<std::string, std::pair<double, int>> sums;
  for (const ScalarMetricRow& row : rows) {
    auto& [sum, count] = sums[row.metric];
    sum += row.value;
    ++count;
  }

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.out_file.empty()) {
    file.open(args.out_file);
    if (!file) throw IoError("cannot open " + args.out_file + " for writing");
    out = &file;
  }
  *out << "metric,value\n";
  for (const auto& [metric, pair] : sums) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.17g", pair.first / pair.second);
    *out << metric << ',' << buffer << '\n';
  }
}

// --- bench ----------------------------------------------------------------------

struct BenchArgs {
  std::string scenes_file;
  std::string out_dir;
  int jobs = 1;
  bool dry_run = false;
};

void cmd_bench(const BenchArgs& args) {
  const BenchConfig cfg = bench_config_from_json(load_json_file(args.scenes_file));
  if (args.dry_run) {
    for (const SceneSpec& scene : cfg.scenes) {
      const SparseModel model = read_model_auto(scene.model_dir);
      const auto features = read_feature_directory(scene.features_dir);
      for (const auto& [id, image] : model.images) {
        if (features.find(image.name) == features.end()) {
          throw Error("scene '" + scene.name + "': no features for image '" +
                      image.name + "'");
        }
      }
      if (!scene.gt_dir.empty()) read_model_auto(scene.gt_dir);
      std::cout << "scene '" << scene.name << "': " << model.images.size()
                << " images, " << features.size() << " feature files: ok\n";
    }
    std::cout << "dry run ok (" << cfg.scenes.size() << " scenes)\n";
    return;
  }
  const BenchRun run = run_bench(cfg, args.jobs);
  write_bench_outputs(run, cfg, args.out_dir);
  for (const SceneOutcome& scene : run.scenes) {
    std::cout << "scene '" << scene.scene << "': "
              << (scene.failed
                      ? "FAILED at " + scene.failed_stage
                      : "ok, total " + format_value(scene.timings.total) + " s")
              << "\n";
  }
  std::cout << "bench: " << run.scenes.size() << " scenes -> " << args.out_dir
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"posebench: SfM pose refinement and benchmarking toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "Cap worker threads (default: POSEBENCH_THREADS or all cores)");

  SynthArgs synth_args;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene");
  synth_cmd->add_option("--config", synth_args.config_file, "Synth config JSON")
      ->required();
  synth_cmd->add_option("--out", synth_args.out_dir, "Output directory")
      ->required();
  synth_cmd->add_option("--format", synth_args.format, "Model format (binary|text)");

  SelectPairsArgs pairs_args;
  CLI::App* pairs_cmd =
      app.add_subcommand("select-pairs", "Pose-guided image pair selection");
  pairs_cmd->add_option("--model", pairs_args.model_dir, "Model directory")
      ->required();
  pairs_cmd->add_option("--k", pairs_args.k_nearest, "Nearest views per image");
  pairs_cmd->add_option("--max-angle", pairs_args.max_angle,
                        "Max viewing-ray angle (deg)");
  pairs_cmd->add_option("--out", pairs_args.out_file, "Pairs file (default stdout)");

  MatchArgs match_args;
  CLI::App* match_cmd =
      app.add_subcommand("match", "MNN matching with optional verification");
  match_cmd->add_option("--features", match_args.features_dir, "FEAT1 directory")
      ->required();
  match_cmd->add_option("--pairs", match_args.pairs_file, "Pairs file")->required();
  match_cmd->add_option("--model", match_args.model_dir,
                        "Model directory (enables epipolar verification)");
  match_cmd->add_option("--threshold", match_args.threshold_px,
                        "Sampson threshold (px)");
  match_cmd->add_option("--max-distance", match_args.max_distance,
                        "Max descriptor distance");
  match_cmd->add_option("--ratio", match_args.ratio, "Lowe ratio");
  match_cmd->add_option("--out", match_args.out_file, "Match dump file")
      ->required();

  TriangulateArgs tri_args;
  CLI::App* tri_cmd =
      app.add_subcommand("triangulate", "Track building and triangulation");
  tri_cmd->add_option("--model", tri_args.model_dir, "Model directory")->required();
  tri_cmd->add_option("--features", tri_args.features_dir, "FEAT1 directory")
      ->required();
  tri_cmd->add_option("--matches", tri_args.matches_file, "Match dump")->required();
  tri_cmd->add_option("--out", tri_args.out_dir, "Output model directory")
      ->required();
  tri_cmd->add_option("--format", tri_args.format, "Model format (binary|text)");
  tri_cmd->add_option("--max-reproj", tri_args.max_reproj_px,
                      "Max reprojection error (px)");
  tri_cmd->add_option("--min-angle", tri_args.min_tri_angle_deg,
                      "Min triangulation angle (deg)");
  tri_cmd->add_option("--min-track-len", tri_args.min_track_len,
                      "Min track length");

  RefineArgs refine_args;
  CLI::App* refine_cmd =
      app.add_subcommand("refine", "Full feed-forward refinement pipeline");
  refine_cmd->add_option("--model", refine_args.model_dir, "Initial model")
      ->required();
  refine_cmd->add_option("--features", refine_args.features_dir, "FEAT1 directory")
      ->required();
  refine_cmd->add_option("--out", refine_args.out_dir, "Output directory")
      ->required();
  refine_cmd->add_option("--config", refine_args.config_file,
                         "Refine config JSON (defaults when omitted)");
  refine_cmd->add_option("--format", refine_args.format,
                         "Model format (binary|text)");

  EvalPosesArgs ep_args;
  CLI::App* ep_cmd = app.add_subcommand("eval-poses", "Pose accuracy evaluation");
  ep_cmd->add_option("--est", ep_args.est_dir, "Estimated model")->required();
  ep_cmd->add_option("--gt", ep_args.gt_dir, "Ground-truth model")->required();
  ep_cmd->add_option("--rot-deg", ep_args.rot_deg, "Rotation threshold (deg)");
  ep_cmd->add_option("--pos", ep_args.pos, "Position threshold (GT units)");
  ep_cmd->add_option("--sweep", ep_args.sweep,
                     "Comma-separated position thresholds for the curve");
  ep_cmd->add_option("--out", ep_args.out_file, "Per-view CSV (default stdout)");
  ep_cmd->add_option("--curve-out", ep_args.curve_file, "Curve CSV");
  ep_cmd->add_flag("--ransac", ep_args.use_ransac, "Robust alignment");
  ep_cmd->add_flag("--scene-mean", ep_args.scene_mean,
                   "Per-scene-mean accuracy instead of pooled views");

  EvalNvsArgs nvs_args;
  CLI::App* nvs_cmd = app.add_subcommand("eval-nvs", "PSNR/SSIM evaluation");
  nvs_cmd->add_option("--renders", nvs_args.renders_dir, "Rendered images")
      ->required();
  nvs_cmd->add_option("--gt", nvs_args.gt_dir, "Ground-truth images")->required();
  nvs_cmd->add_option("--scene", nvs_args.scene, "Scene name")->required();
  nvs_cmd->add_option("--split", nvs_args.split_file,
                      "Explicit test split (one view per line)");
  nvs_cmd->add_option("--lpips", nvs_args.lpips_csv,
                      "Metric CSV with ingested LPIPS values");
  nvs_cmd->add_option("--out", nvs_args.out_file, "Per-view metric CSV");
  nvs_cmd->add_option("--summary-out", nvs_args.summary_file,
                      "Scene summary CSV (scene,metric,value)");
  nvs_cmd->add_option("--psnr-cap", nvs_args.inf_cap,
                      "Cap for infinite PSNR in means (dB)");

  AggregateArgs agg_args;
  CLI::App* agg_cmd =
      app.add_subcommand("aggregate", "Dataset means from per-scene metrics");
  agg_cmd->add_option("--metrics", agg_args.metrics_file, "metrics.csv")
      ->required();
  agg_cmd->add_option("--out", agg_args.out_file, "Output CSV (default stdout)");

  BenchArgs bench_args;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Multi-scene benchmark driver");
  bench_cmd->add_option("--scenes", bench_args.scenes_file, "Bench config JSON")
      ->required();
  bench_cmd->add_option("--out", bench_args.out_dir, "Output directory");
  bench_cmd->add_option("--jobs", bench_args.jobs, "Scene-level parallelism");
  bench_cmd->add_flag("--dry-run", bench_args.dry_run,
                      "Validate inputs without writing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }

  if (threads > 0) set_max_threads(threads);
  if (bench_cmd->parsed() && !bench_args.dry_run && bench_args.out_dir.empty()) {
    std::cerr << "error: bench requires --out unless --dry-run is given\n";
    return 2;
  }

  try {
    if (synth_cmd->parsed()) cmd_synth(synth_args);
    if (pairs_cmd->parsed()) cmd_select_pairs(pairs_args);
    if (match_cmd->parsed()) cmd_match(match_args);
    if (tri_cmd->parsed()) cmd_triangulate(tri_args);
    if (refine_cmd->parsed()) cmd_refine(refine_args);
    if (ep_cmd->parsed()) cmd_eval_poses(ep_args);
    if (nvs_cmd->parsed()) cmd_eval_nvs(nvs_args);
    if (agg_cmd->parsed()) cmd_aggregate(agg_args);
    if (bench_cmd->parsed()) cmd_bench(bench_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
