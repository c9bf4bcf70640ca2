// mocap: command-line front end for the reconstruction pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mocap/errors.hpp"
#include "mocap/ik_solver.hpp"
#include "mocap/implicit_trajectory.hpp"
#include "mocap/json_util.hpp"
#include "mocap/metrics.hpp"
#include "mocap/pipeline.hpp"
#include "mocap/synthetic.hpp"

namespace fs = std::filesystem;
using namespace mocap;

namespace {

int exit_code(ErrorKind kind)
{
  switch (kind)
  {
    case ErrorKind::Config:
      return 2;
    case ErrorKind::Data:
      return 3;
    case ErrorKind::Numerical:
      return 4;
  }
  return 1;
}

struct Common
{
  std::uint64_t seed = 0;
  std::string config;
  std::string output_dir = "run";
  bool seed_set = false;
  bool output_set = false;
};

void add_common(CLI::App* cmd, Common& c)
{
  cmd->add_option("--seed", c.seed, "Random seed")->each([&](const std::string&) { c.seed_set = true; });
  cmd->add_option("--config", c.config, "Pipeline configuration file");
  cmd->add_option("--output-dir", c.output_dir, "Output directory")
      ->each([&](const std::string&) { c.output_set = true; });
}

/// Config file (or defaults) with command-line overrides applied.
PipelineConfig base_config(const Common& c)
{
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
  if (c.seed_set)
    cfg.seed = c.seed;
  if (c.output_set || c.config.empty())
    cfg.output_dir = c.output_dir;
  return cfg;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Markerless motion capture reconstruction and skeleton fitting"};
  app.require_subcommand(1);
  Common common;

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic fixture");
  std::string preset = "clean-walk";
  simulate->add_option("--preset", preset, "clean-walk | noisy-walk | sparse-25-walk | biased-markers");
  add_common(simulate, common);

  // gate
  auto* gate = app.add_subcommand("gate", "Zero confidences outside the image or below a threshold");
  std::string rig_path, obs_path, out_file;
  double min_conf = kDefaultMinConfidence;
  gate->add_option("--rig", rig_path)->required();
  gate->add_option("--observations", obs_path)->required();
  gate->add_option("--min-confidence", min_conf);
  gate->add_option("--output", out_file, "Output observations file");
  add_common(gate, common);

  // weights
  auto* weights = app.add_subcommand("weights", "Cross-camera robust weights");
  weights->add_option("--rig", rig_path)->required();
  weights->add_option("--observations", obs_path)->required();
  weights->add_option("--output", out_file, "Output weight file");
  add_common(weights, common);

  // triangulate
  auto* triangulate = app.add_subcommand("triangulate", "Per-frame robust triangulation");
  std::string weights_path;
  triangulate->add_option("--rig", rig_path)->required();
  triangulate->add_option("--observations", obs_path)->required();
  triangulate->add_option("--weights", weights_path, "Use these weights instead of recomputing");
  triangulate->add_option("--output", out_file, "Output trajectory file");
  add_common(triangulate, common);

  // fit-trajectory
  auto* fit = app.add_subcommand("fit-trajectory", "Fit the implicit trajectory network");
  std::string model_name = "default-40";
  int iterations = -1;
  fit->add_option("--rig", rig_path)->required();
  fit->add_option("--observations", obs_path)->required();
  fit->add_option("--weights", weights_path);
  fit->add_option("--model", model_name, "Model used for bone edges");
  fit->add_option("--iterations", iterations);
  add_common(fit, common);

  // ik
  auto* ik = app.add_subcommand("ik", "Bilevel inverse kinematics on one or more trajectories");
  std::vector<std::string> target_paths;
  std::string limit_mode;
  ik->add_option("--targets", target_paths, "Trajectory files, one per trial")->required();
  ik->add_option("--model", model_name);
  ik->add_option("--joint-limits", limit_mode, "soft | hard");
  add_common(ik, common);

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Evaluate an IK solution");
  std::string ik_dir, targets_path, events_path;
  std::vector<double> gc_thresholds;
  metrics->add_option("--rig", rig_path)->required();
  metrics->add_option("--observations", obs_path)->required();
  metrics->add_option("--weights", weights_path)->required();
  metrics->add_option("--targets", targets_path)->required();
  metrics->add_option("--ik-dir", ik_dir)->required();
  metrics->add_option("--model", model_name);
  metrics->add_option("--events", events_path, "Reference gait events");
  metrics->add_option("--gc", gc_thresholds, "GC thresholds in pixels");
  add_common(metrics, common);

  // refine-model
  auto* refine = app.add_subcommand("refine-model", "Move markers by the mean calibration offsets");
  std::vector<std::string> calib_paths;
  refine->add_option("--model", model_name);
  refine->add_option("--calibrations", calib_paths)->required();
  refine->add_option("--output", out_file, "Output model file");
  add_common(refine, common);

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage from one configuration");
  std::string source;
  std::string keypoints;
  pipeline->add_option("--rig", rig_path);
  pipeline->add_option("--observations", obs_path);
  pipeline->add_option("--events", events_path);
  pipeline->add_option("--source", source, "implicit | robust");
  pipeline->add_option("--keypoints", keypoints, "all | sparse-25 | comma-separated list");
  add_common(pipeline, common);

  // compare
  auto* compare = app.add_subcommand("compare", "Run several configurations into one table");
  std::vector<std::string> config_paths;
  compare->add_option("configs", config_paths, "Configuration files")->required();
  compare->add_option("--seed", common.seed)->each([&](const std::string&) { common.seed_set = true; });
  compare->add_option("--output-dir", common.output_dir)
      ->each([&](const std::string&) { common.output_set = true; });

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::CallForHelp& e)
  {
    return app.exit(e);
  }
  catch (const CLI::ParseError& e)
  {
    app.exit(e);
    return 2;
  }

  try
  {
    PipelineConfig cfg = compare->parsed() ? PipelineConfig{} : base_config(common);
    const fs::path out = cfg.output_dir;
    auto output_or = [&](const char* fallback) {
      return out_file.empty() ? out / fallback : fs::path(out_file);
    };

    if (simulate->parsed())
    {
      const Fixture f = make_fixture(preset, cfg.seed);
      write_fixture(f, out);
      std::printf("wrote fixture '%s' to %s\n", preset.c_str(), out.string().c_str());
    }
    else if (gate->parsed())
    {
      const CameraRig rig = load_rig(rig_path);
      const ObservationSet g = gate_observations(load_observations(obs_path), rig, min_conf);
      save_observations(g, output_or("gated_observations.jsonl"));
    }
    else if (weights->parsed())
    {
      const CameraRig rig = load_rig(rig_path);
      const ObservationSet obs = load_observations(obs_path);
      save_weight_field(robust_weights(obs, rig, cfg.robust), obs, output_or("weights.json"));
    }
    else if (triangulate->parsed())
    {
      const CameraRig rig = load_rig(rig_path);
      const ObservationSet obs = load_observations(obs_path);
      const WeightField w = weights_path.empty() ? robust_weights(obs, rig, cfg.robust)
                                                 : load_weight_field(obs, weights_path);
      const PointTrajectory traj = triangulate_with_weights(obs, rig, w);
      save_trajectory(traj, output_or("triangulated.json"), &w, &obs.camera_names());
    }
    else if (fit->parsed())
    {
      const CameraRig rig = load_rig(rig_path);
      const ObservationSet obs = load_observations(obs_path);
      const SkeletonModel model = resolve_model(model_name);
      const WeightField w = weights_path.empty() ? robust_weights(obs, rig, cfg.robust)
                                                 : load_weight_field(obs, weights_path);
      FitConfig fc = cfg.fit;
      fc.seed = cfg.seed;
      if (iterations > 0)
        fc.iterations = iterations;
      fc.bone_edges = rigid_marker_pairs(model, obs.joint_names());
      const FitResult r = fit_trajectory(obs, rig, w, fc);
      save_implicit(r.model, &r.report, out / "implicit.json");
      save_trajectory(r.model.sample(obs.timestamps()), out / "targets.json");
      std::printf("best full-batch loss %.6g at iteration %d\n", r.report.best_loss,
                  r.report.best_iteration);
    }
    else if (ik->parsed())
    {
      const SkeletonModel model = resolve_model(model_name);
      IKConfig ic = cfg.ik;
      ic.seed = cfg.seed;
      if (limit_mode == "hard")
        ic.joint_limit_mode = JointLimitMode::Hard;
      else if (limit_mode == "soft")
        ic.joint_limit_mode = JointLimitMode::Soft;
      else if (!limit_mode.empty())
        throw ConfigError("--joint-limits must be soft or hard");
      std::vector<IKTrial> trials;
      for (const auto& p : target_paths)
      {
        LoadedTrajectory lt = load_trajectory(p);
        IKTrial trial{lt.trajectory, Eigen::MatrixXd()};
        if (lt.weights)
          trial.weights = target_weights(*lt.weights);
        trials.push_back(std::move(trial));
      }
      const IKSolution sol = solve_ik(model, trials, ic);
      save_ik_solution(model, sol, out);
      for (const auto& w : sol.diagnostics.warnings)
        std::fprintf(stderr, "warning: %s\n", w.c_str());
    }
    else if (metrics->parsed())
    {
      const CameraRig rig = load_rig(rig_path);
      const ObservationSet obs = load_observations(obs_path);
      const SkeletonModel model = resolve_model(model_name);
      const WeightField w = load_weight_field(obs, weights_path);
      const PointTrajectory targets = load_trajectory(targets_path).trajectory;
      const ModelCalibration calib = load_calibration(model, fs::path(ik_dir) / "calibration.json");
      const PoseSequence poses = load_pose_csv(fs::path(ik_dir) / "poses.csv");
      const PointTrajectory predicted = predicted_markers(model, calib, poses, obs.joint_names());
      MetricsReport m;
      m.marker_err_mm = residual_marker_error(predicted, targets);
      m.pose_noise = pose_noise(poses);
      m.gc_lambda = cfg.gc_lambda;
      for (double d : gc_thresholds.empty() ? cfg.gc_thresholds_px : gc_thresholds)
        m.gc[d] = geometric_consistency(predicted, obs, rig, w, d, cfg.gc_lambda);
      m.violations = violation_fractions(model, poses);
      if (!events_path.empty())
      {
        const auto reference = load_events(events_path);
        m.gait = gait_error_stats(sample_events(model, calib, poses, reference), reference,
                                  cfg.match_tolerance_s);
      }
      save_metrics(m, out / "metrics.json");
    }
    else if (refine->parsed())
    {
      const SkeletonModel model = resolve_model(model_name);
      std::vector<ModelCalibration> calibs;
      for (const auto& p : calib_paths)
        calibs.push_back(load_calibration(model, p));
      const SkeletonModel refined = refine_markers(model, calibs, model.frozen_markers());
      save_model(refined, output_or("refined_model.json"));
    }
    else if (pipeline->parsed())
    {
      if (!rig_path.empty())
        cfg.rig = rig_path;
      if (!obs_path.empty())
        cfg.observations = obs_path;
      if (!events_path.empty())
        cfg.reference_events = events_path;
      if (source == "implicit")
        cfg.source = TrajectorySource::Implicit;
      else if (source == "robust")
        cfg.source = TrajectorySource::Robust;
      else if (!source.empty())
        throw ConfigError("--source must be implicit or robust");
      if (!keypoints.empty())
        cfg.keypoint_set = keypoints;
      const PipelineResult r = run_pipeline(cfg);
      std::fputs(comparison_table({{"run", r.metrics}}).c_str(), stdout);
    }
    else if (compare->parsed())
    {
      std::vector<std::pair<std::string, PipelineConfig>> runs;
      const fs::path root = common.output_dir;
      for (const auto& p : config_paths)
      {
        PipelineConfig c = load_config(p);
        if (common.seed_set)
          c.seed = common.seed;
        const std::string label = fs::path(p).stem().string();
        c.output_dir = root / label;
        runs.emplace_back(label, c);
      }
      const auto rows = run_comparison(runs, root / "comparison.csv");
      std::fputs(comparison_table(rows).c_str(), stdout);
    }
  }
  catch (const Error& e)
  {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  }
  catch (const std::exception& e)
  {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
