// Command-line front end: simulate datasets, run the odometry pipeline,
// benchmark the map structures, evaluate trajectories.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "odomkit/bench.hpp"
#include "odomkit/evaluation.hpp"
#include "odomkit/io.hpp"
#include "odomkit/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace odomkit;

namespace {

// Flat dotted-key overrides onto the pipeline options. Unknown keys fail the
// run: a silently ignored typo costs an afternoon.
void apply_option(PipelineOptions& opt, const std::string& key, const std::string& value) {
  auto as_double = [&] { return std::stod(value); };
  auto as_int = [&] { return std::stoi(value); };
  auto as_bool = [&] {
    return value == "1" || value == "true" || value == "on" || value == "yes";
  };

  if (key == "lio.voxel_size") opt.map.voxel_size = as_double();
  else if (key == "lio.min_point_distance") opt.map.min_point_distance = as_double();
  else if (key == "lio.leaf_capacity") opt.map.leaf_capacity = as_int();
  else if (key == "lio.downsample_target") opt.lio.downsample_target = as_int();
  else if (key == "lio.k") opt.lio.classify.k = as_int();
  else if (key == "lio.r") opt.lio.classify.r = as_double();
  else if (key == "lio.d_max") opt.lio.classify.d_max = as_double();
  else if (key == "lio.sigma3d_max") opt.lio.classify.sigma3d_max = as_double();
  else if (key == "lio.corr_radius") opt.lio.corr_radius = as_double();
  else if (key == "lio.corr_neighbors") opt.lio.corr_neighbors = as_int();
  else if (key == "lio.plane_fit_max_rms") opt.lio.plane_fit_max_rms = as_double();
  else if (key == "lio.line_fit_max_rms") opt.lio.line_fit_max_rms = as_double();
  else if (key == "lio.rounds") opt.lio.reassociation_rounds = as_int();
  else if (key == "lio.max_iters") opt.lio.solve.max_iters = as_int();
  else if (key == "lio.sensor_noise") opt.lio.sensor_noise = as_double();
  else if (key == "lio.use_fusion_prior") opt.lio.use_prior = as_bool();
  else if (key == "vio.min_tracks") opt.vio.min_tracks = as_int();
  else if (key == "vio.keyframe_stride") opt.vio.keyframe_stride = as_int();
  else if (key == "vio.keyframe_translation") opt.vio.keyframe_translation = as_double();
  else if (key == "vio.pixel_noise") opt.vio.pixel_noise = as_double();
  else if (key == "vio.max_keyframes") opt.vio.max_keyframes = as_int();
  else if (key == "fusion.window_nodes") opt.fusion.window_nodes = as_int();
  else if (key == "fusion.reliability_rho") opt.fusion.reliability_rho = as_double();
  else if (key == "fusion.max_iters") opt.fusion.solve.max_iters = as_int();
  else if (key == "run.init_stationary_span") opt.init_stationary_span = as_double();
  else if (key == "run.enable_lio") opt.enable_lio = as_bool();
  else if (key == "run.enable_vio") opt.enable_vio = as_bool();
  else if (key == "run.deterministic") opt.deterministic = as_bool();
  else throw std::runtime_error("unknown option key '" + key + "'");
}

void apply_env_overrides(PipelineOptions& opt, char** envp) {
  // ODOMKIT_LIO__VOXEL_SIZE=2.0 maps to lio.voxel_size (double underscore
  // stands in for the dot).
  const std::string prefix = "ODOMKIT_";
  for (char** e = envp; e && *e; ++e) {
    std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(prefix.size(), eq - prefix.size());
    const std::string value = entry.substr(eq + 1);
    for (auto& c : key) c = static_cast<char>(std::tolower(c));
    size_t pos;
    while ((pos = key.find("__")) != std::string::npos) key.replace(pos, 2, ".");
    apply_option(opt, key, value);
  }
}

int cmd_simulate(const std::string& preset, uint32_t seed, const fs::path& out,
                 double dust_fraction, double duration) {
  auto spec = scenario_by_name(preset, seed);
  if (!spec) {
    std::cerr << "unknown preset '" << preset << "'; valid presets:";
    for (const auto& name : scenario_names()) std::cerr << ' ' << name;
    std::cerr << '\n';
    return 1;
  }
  if (dust_fraction >= 0.0) {
    spec->degradation.dust_point_fraction = dust_fraction;
    if (spec->degradation.window_end <= spec->degradation.window_start) {
      spec->degradation.window_start = 0.0;
      spec->degradation.window_end = spec->trajectory.duration;
    }
  }
  if (duration > 0.0) spec->trajectory.duration = duration;

  const Dataset ds = simulate_scenario(*spec, seed);
  save_dataset(out, ds);
  std::cout << "wrote dataset '" << preset << "' (seed " << seed << ") to " << out << ":\n"
            << "  imu samples:   " << ds.imu.size() << "\n"
            << "  lidar scans:   " << ds.scans.size() << "\n"
            << "  camera frames: " << ds.frames.size() << "\n"
            << "  gt poses:      " << ds.ground_truth.size() << '\n';
  return 0;
}

int cmd_run(const fs::path& dataset_dir, const fs::path& out, PipelineOptions opt,
            const std::vector<std::string>& disable) {
  for (const auto& name : disable) {
    if (name == "lio") opt.enable_lio = false;
    else if (name == "vio") opt.enable_vio = false;
    else throw std::runtime_error("unknown engine '" + name + "' (expected lio or vio)");
  }

  const Dataset ds = load_dataset(dataset_dir);
  const PipelineResult res = run_pipeline(ds, opt);
  fs::create_directories(out);
  io::write_tum(out / "highrate.tum", res.highrate);
  io::write_tum(out / "optimized.tum", res.optimized);
  io::write_map(out / "map.bin", out / "map.txt", res.map_points, res.map_voxel_size);

  // Human-readable summary plus machine-readable JSON lines.
  std::ostringstream table;
  table << "module   calls   mean_ms   total_ms\n";
  auto row = [&](const char* name, const ModuleTiming& t) {
    table << name << "   " << t.count << "   " << t.mean_ms() << "   " << t.total_ms << '\n';
  };
  row("LIO    ", res.lio_timing);
  row("VIO    ", res.vio_timing);
  row("IMUODOM", res.fusion_timing);
  table << "wall_ms " << res.wall_ms << '\n';
  if (!opt.enable_vio) table << "VIO bypassed\n";
  if (!opt.enable_lio) table << "LIO bypassed\n";

  std::ofstream txt(out / "report.txt");
  txt << table.str();
  std::cout << table.str();

  std::ofstream jsonl(out / "report.jsonl");
  auto mod = [&](const char* name, const ModuleTiming& t, json extra) {
    json j = {{"module", name},
              {"calls", t.count},
              {"mean_ms", t.mean_ms()},
              {"total_ms", t.total_ms}};
    j.update(extra);
    jsonl << j.dump() << '\n';
  };
  mod("lio", res.lio_timing,
      {{"scans", res.lio_scans},
       {"prior_dominated", res.lio_prior_dominated},
       {"degenerate_frames", res.lio_degenerate_frames},
       {"bypass", !opt.enable_lio}});
  mod("vio", res.vio_timing,
      {{"keyframes", res.vio_keyframes},
       {"degraded", res.vio_degraded},
       {"bypass", !opt.enable_vio}});
  mod("imuodom", res.fusion_timing,
      {{"constraints", res.constraints_applied}, {"highrate_poses", res.highrate.size()}});
  jsonl << json{{"module", "summary"},
                {"wall_ms", res.wall_ms},
                {"map_points", res.map_points.size()},
                {"optimized_poses", res.optimized.size()}}
               .dump()
        << '\n';

  if (!ds.ground_truth.empty()) {
    std::string err;
    if (const auto metrics = ate(res.optimized, ds.ground_truth, 0.02, &err)) {
      std::cout << "ATE vs bundled ground truth: rmse " << metrics->rmse << " m, max "
                << metrics->max << " m\n";
      jsonl << json{{"module", "ate"}, {"rmse", metrics->rmse}, {"max", metrics->max}}.dump()
            << '\n';
    } else {
      std::cout << "ATE unavailable: " << err << '\n';
    }
  }
  return 0;
}

int cmd_bench(const BenchWorkload& workload, const fs::path& out) {
  const BenchResult res = benchmark_tree(workload);
  fs::create_directories(out);
  {
    std::ofstream csv(out / "bench.csv");
    csv << res.to_csv();
  }
  std::vector<double> x;
  io::PlotSeries insert{"octree_insert_us", {}}, build{"kdtree_build_us", {}};
  for (const auto& r : res.rows) {
    x.push_back(r.frame);
    insert.y.push_back(r.octree_insert_us);
    build.y.push_back(r.kdtree_build_us);
  }
  {
    std::ofstream svg(out / "bench.svg");
    svg << io::render_svg_plot("per-frame insert/build time (us)", x, {insert, build});
  }
  std::cout << "frames " << res.rows.size() << ", cumulative octree insert "
            << res.total_octree_insert_us / 1e3 << " ms, cumulative kd-tree build "
            << res.total_kdtree_build_us / 1e3 << " ms\n";
  if (workload.check_exactness) {
    std::cout << "exactness check: " << (res.query_mismatches == 0 ? "PASS" : "FAIL") << " ("
              << res.query_mismatches << " mismatches)\n";
    if (res.query_mismatches != 0) return 1;
  }
  return 0;
}

int cmd_eval(const fs::path& est_path, const fs::path& gt_path, double max_dt,
             const fs::path& out) {
  const EvalTrajectory est = io::read_tum(est_path);
  const EvalTrajectory gt = io::read_tum(gt_path);
  std::string err;
  const auto res = ate(est, gt, max_dt, &err);
  if (!res) {
    std::cerr << "evaluation failed: " << err << '\n';
    return 1;
  }
  std::cout << "poses " << res->per_pose_errors.size() << "\nrmse " << res->rmse << " m\nmax  "
            << res->max << " m\n";
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream csv(out / "metrics.csv");
    csv << "metric,value\nrmse," << res->rmse << "\nmax," << res->max << "\npairs,"
        << res->per_pose_errors.size() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv, char** envp) {
  CLI::App app{"multi-sensor odometry toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "synthesize a dataset from a scenario preset");
  std::string preset = "clean-room";
  uint32_t seed = 1;
  std::string sim_out = "dataset";
  double dust_fraction = -1.0;
  double duration = -1.0;
  sim_cmd->add_option("--preset", preset, "scenario preset name");
  sim_cmd->add_option("--seed", seed, "random seed");
  sim_cmd->add_option("--out", sim_out, "output dataset directory");
  sim_cmd->add_option("--dust-fraction", dust_fraction, "override dust point fraction");
  sim_cmd->add_option("--duration", duration, "override trajectory duration, seconds");

  // run
  auto* run_cmd = app.add_subcommand("run", "run the odometry pipeline on a dataset");
  std::string dataset_dir;
  std::string run_out = "run_out";
  std::string config_path;
  std::vector<std::string> disable;
  std::vector<std::string> sets;
  bool deterministic = false;
  run_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
  run_cmd->add_option("--out", run_out, "output directory");
  run_cmd->add_option("--config", config_path, "flat key=value config file");
  run_cmd->add_option("--disable", disable, "disable an engine (lio, vio)");
  run_cmd->add_option("--set", sets, "override option key=value (repeatable)");
  run_cmd->add_flag("--deterministic", deterministic,
                    "single-threaded, timestamp-ordered processing");

  // bench-tree
  auto* bench_cmd = app.add_subcommand("bench-tree", "dynamic octree vs KD-tree benchmark");
  BenchWorkload workload;
  workload.frames = 50;
  workload.points_per_frame = 5000;
  std::string bench_out = "bench_out";
  bench_cmd->add_option("--frames", workload.frames, "number of frames");
  bench_cmd->add_option("--points", workload.points_per_frame, "points inserted per frame");
  bench_cmd->add_option("--queries", workload.queries_per_frame, "queries per frame");
  bench_cmd->add_option("--seed", workload.seed, "random seed");
  bench_cmd->add_option("--out", bench_out, "output directory");
  bench_cmd->add_flag("--check-exactness", workload.check_exactness,
                      "verify octree answers against the KD-tree per frame");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "absolute trajectory error of est vs gt");
  std::string est_path, gt_path, eval_out;
  double max_dt = 0.02;
  eval_cmd->add_option("--est", est_path, "estimated trajectory (TUM)")->required();
  eval_cmd->add_option("--gt", gt_path, "ground-truth trajectory (TUM)")->required();
  eval_cmd->add_option("--max-dt", max_dt, "association tolerance, seconds");
  eval_cmd->add_option("--out", eval_out, "metrics output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim_cmd->parsed()) {
      return cmd_simulate(preset, seed, sim_out, dust_fraction, duration);
    }
    if (run_cmd->parsed()) {
      PipelineOptions opt;
      opt.deterministic = false;  // engines on their own threads by default
      if (!config_path.empty()) {
        for (const auto& [k, v] : io::read_key_values(config_path)) apply_option(opt, k, v);
      }
      apply_env_overrides(opt, envp);
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::runtime_error("--set expects key=value");
        apply_option(opt, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (deterministic) opt.deterministic = true;
      return cmd_run(dataset_dir, run_out, opt, disable);
    }
    if (bench_cmd->parsed()) return cmd_bench(workload, bench_out);
    if (eval_cmd->parsed()) return cmd_eval(est_path, gt_path, max_dt, eval_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
