#include "mocap/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

using json_util::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& ctx)
{
  if (!obj.is_object())
    throw ConfigError(ctx + ": expected an object");
  for (const auto& [key, value] : obj.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(ctx + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& ctx)
{
  if (!obj.contains(key))
    return;
  try
  {
    out = obj.at(key).get<T>();
  }
  catch (const json::exception& e)
  {
    throw ConfigError(ctx + "." + key + ": " + e.what());
  }
}

void read_path(const json& obj, const char* key, fs::path& out, const std::string& ctx)
{
  std::string s = out.string();
  read(obj, key, s, ctx);
  out = s;
}

const char* to_string(TrajectorySource s)
{
  return s == TrajectorySource::Implicit ? "implicit" : "robust";
}

template <typename F>
auto stage(const std::string& name, F&& fn)
{
  try
  {
    return fn();
  }
  catch (const Error& e)
  {
    throw Error(e.kind(), "stage '" + name + "': " + e.what());
  }
}

} // namespace

void PipelineConfig::validate() const
{
  if (rig.empty())
    throw ConfigError("no rig path given");
  if (observations.empty())
    throw ConfigError("no observations path given");
  for (const auto& p : {rig, observations})
    if (!fs::exists(p))
      throw ConfigError("input file '" + p.string() + "' does not exist");
  if (!reference_events.empty() && !fs::exists(reference_events))
    throw ConfigError("input file '" + reference_events.string() + "' does not exist");
  if (model != "default-40" && !fs::exists(model))
    throw ConfigError("model file '" + model + "' does not exist");
  if (output_dir.empty())
    throw ConfigError("no output directory given");
  if (!(min_confidence >= 0.0 && min_confidence <= 1.0))
    throw ConfigError("min_confidence must lie in [0, 1]");
  if (!(robust.kernel_scale_px > 0.0) || robust.iterations < 1)
    throw ConfigError("robust weighting needs a positive kernel scale and iterations");
  if (gc_thresholds_px.empty())
    throw ConfigError("at least one GC threshold is required");
  for (double d : gc_thresholds_px)
    if (!(d > 0.0))
      throw ConfigError("GC thresholds must be positive");
  if (!(match_tolerance_s > 0.0))
    throw ConfigError("match tolerance must be positive");
  fit.validate();
  ik.validate();
}

json config_to_json(const PipelineConfig& c)
{
  json doc;
  doc["paths"] = {
      {"rig", c.rig.generic_string()},
      {"observations", c.observations.generic_string()},
      {"model", c.model},
      {"output_dir", c.output_dir.generic_string()},
      {"reference_events", c.reference_events.generic_string()},
  };
  doc["trajectory_source"] = to_string(c.source);
  doc["keypoint_set"] = c.keypoint_set;
  doc["gate"] = {{"min_confidence", c.min_confidence}};
  doc["robust"] = {{"kernel_scale_px", c.robust.kernel_scale_px},
                   {"iterations", c.robust.iterations}};
  doc["fit"] = {
      {"lambda_smooth", c.fit.lambda_smooth},
      {"lambda_skeleton", c.fit.lambda_skeleton},
      {"huber",
       {{"knee1", c.fit.huber.knee1},
        {"knee2", c.fit.huber.knee2},
        {"tail_slope", c.fit.huber.tail_slope}}},
      {"peak_learning_rate", c.fit.peak_learning_rate},
      {"warmup_iterations", c.fit.warmup_iterations},
      {"iterations", c.fit.iterations},
      {"batch_size", c.fit.batch_size},
      {"eval_every", c.fit.eval_every},
      {"pe_frequencies", c.fit.pe_frequencies},
      {"output_init_scale", c.fit.output_init_scale},
  };
  doc["ik"] = {
      {"kernel", c.ik.kernel == MarkerKernel::Huber ? "huber" : "squared"},
      {"huber_delta", c.ik.huber_delta},
      {"alpha_joint", c.ik.alpha_joint},
      {"joint_limit_mode", c.ik.joint_limit_mode == JointLimitMode::Hard ? "hard" : "soft"},
      {"alpha_anthro", c.ik.alpha_anthro},
      {"alpha_offset_anat", c.ik.alpha_offset_anat},
      {"alpha_offset_track", c.ik.alpha_offset_track},
      {"outer_rounds", c.ik.outer_rounds},
      {"init_iterations", c.ik.init_iterations},
      {"pose_iterations", c.ik.pose_iterations},
      {"calib_iterations", c.ik.calib_iterations},
      {"tolerance", c.ik.tolerance},
      {"solve_calibration", c.ik.solve_calibration},
  };
  doc["metrics"] = {
      {"gc_thresholds_px", c.gc_thresholds_px},
      {"gc_lambda", c.gc_lambda},
      {"match_tolerance_s", c.match_tolerance_s},
  };
  doc["stages"] = {{"ik", c.run_ik}, {"metrics", c.run_metrics}};
  doc["seed"] = c.seed;
  return doc;
}

PipelineConfig config_from_json(const json& doc, const PipelineConfig& base)
{
  PipelineConfig c = base;
  const std::string ctx = "config";
  check_keys(doc, {"paths", "trajectory_source", "keypoint_set", "gate", "robust", "fit", "ik",
                   "metrics", "stages", "seed"},
             ctx);
  if (doc.contains("paths"))
  {
    const json& p = doc.at("paths");
    check_keys(p, {"rig", "observations", "model", "output_dir", "reference_events"}, "paths");
    read_path(p, "rig", c.rig, "paths");
    read_path(p, "observations", c.observations, "paths");
    read(p, "model", c.model, "paths");
    read_path(p, "output_dir", c.output_dir, "paths");
    read_path(p, "reference_events", c.reference_events, "paths");
  }
  if (doc.contains("trajectory_source"))
  {
    std::string s;
    read(doc, "trajectory_source", s, ctx);
    if (s == "implicit")
      c.source = TrajectorySource::Implicit;
    else if (s == "robust")
      c.source = TrajectorySource::Robust;
    else
      throw ConfigError("trajectory_source must be 'implicit' or 'robust', got '" + s + "'");
  }
  read(doc, "keypoint_set", c.keypoint_set, ctx);
  if (doc.contains("gate"))
  {
    check_keys(doc.at("gate"), {"min_confidence"}, "gate");
    read(doc.at("gate"), "min_confidence", c.min_confidence, "gate");
  }
  if (doc.contains("robust"))
  {
    const json& r = doc.at("robust");
    check_keys(r, {"kernel_scale_px", "iterations"}, "robust");
    read(r, "kernel_scale_px", c.robust.kernel_scale_px, "robust");
    read(r, "iterations", c.robust.iterations, "robust");
  }
  if (doc.contains("fit"))
  {
    const json& f = doc.at("fit");
    check_keys(f, {"lambda_smooth", "lambda_skeleton", "huber", "peak_learning_rate",
                   "warmup_iterations", "iterations", "batch_size", "eval_every",
                   "pe_frequencies", "output_init_scale"},
               "fit");
    read(f, "lambda_smooth", c.fit.lambda_smooth, "fit");
    read(f, "lambda_skeleton", c.fit.lambda_skeleton, "fit");
    if (f.contains("huber"))
    {
      const json& h = f.at("huber");
      check_keys(h, {"knee1", "knee2", "tail_slope"}, "fit.huber");
      read(h, "knee1", c.fit.huber.knee1, "fit.huber");
      read(h, "knee2", c.fit.huber.knee2, "fit.huber");
      read(h, "tail_slope", c.fit.huber.tail_slope, "fit.huber");
    }
    read(f, "peak_learning_rate", c.fit.peak_learning_rate, "fit");
    read(f, "warmup_iterations", c.fit.warmup_iterations, "fit");
    read(f, "iterations", c.fit.iterations, "fit");
    read(f, "batch_size", c.fit.batch_size, "fit");
    read(f, "eval_every", c.fit.eval_every, "fit");
    read(f, "pe_frequencies", c.fit.pe_frequencies, "fit");
    read(f, "output_init_scale", c.fit.output_init_scale, "fit");
  }
  if (doc.contains("ik"))
  {
    const json& k = doc.at("ik");
    check_keys(k, {"kernel", "huber_delta", "alpha_joint", "joint_limit_mode", "alpha_anthro",
                   "alpha_offset_anat", "alpha_offset_track", "outer_rounds", "init_iterations",
                   "pose_iterations", "calib_iterations", "tolerance", "solve_calibration"},
               "ik");
    if (k.contains("kernel"))
    {
      std::string s;
      read(k, "kernel", s, "ik");
      if (s == "squared")
        c.ik.kernel = MarkerKernel::Squared;
      else if (s == "huber")
        c.ik.kernel = MarkerKernel::Huber;
      else
        throw ConfigError("ik.kernel must be 'squared' or 'huber', got '" + s + "'");
    }
    if (k.contains("joint_limit_mode"))
    {
      std::string s;
      read(k, "joint_limit_mode", s, "ik");
      if (s == "soft")
        c.ik.joint_limit_mode = JointLimitMode::Soft;
      else if (s == "hard")
        c.ik.joint_limit_mode = JointLimitMode::Hard;
      else
        throw ConfigError("ik.joint_limit_mode must be 'soft' or 'hard', got '" + s + "'");
    }
    read(k, "huber_delta", c.ik.huber_delta, "ik");
    read(k, "alpha_joint", c.ik.alpha_joint, "ik");
    read(k, "alpha_anthro", c.ik.alpha_anthro, "ik");
    read(k, "alpha_offset_anat", c.ik.alpha_offset_anat, "ik");
    read(k, "alpha_offset_track", c.ik.alpha_offset_track, "ik");
    read(k, "outer_rounds", c.ik.outer_rounds, "ik");
    read(k, "init_iterations", c.ik.init_iterations, "ik");
    read(k, "pose_iterations", c.ik.pose_iterations, "ik");
    read(k, "calib_iterations", c.ik.calib_iterations, "ik");
    read(k, "tolerance", c.ik.tolerance, "ik");
    read(k, "solve_calibration", c.ik.solve_calibration, "ik");
  }
  if (doc.contains("metrics"))
  {
    const json& m = doc.at("metrics");
    check_keys(m, {"gc_thresholds_px", "gc_lambda", "match_tolerance_s"}, "metrics");
    read(m, "gc_thresholds_px", c.gc_thresholds_px, "metrics");
    read(m, "gc_lambda", c.gc_lambda, "metrics");
    read(m, "match_tolerance_s", c.match_tolerance_s, "metrics");
  }
  if (doc.contains("stages"))
  {
    check_keys(doc.at("stages"), {"ik", "metrics"}, "stages");
    read(doc.at("stages"), "ik", c.run_ik, "stages");
    read(doc.at("stages"), "metrics", c.run_metrics, "stages");
  }
  read(doc, "seed", c.seed, ctx);
  return c;
}

PipelineConfig load_config(const fs::path& path)
{
  json doc;
  try
  {
    doc = json_util::read_file(path);
  }
  catch (const ParseError& e)
  {
    throw ConfigError(e.what());
  }
  PipelineConfig c = config_from_json(doc);
  const fs::path base = path.parent_path();
  auto anchor = [&](fs::path& p) {
    if (!p.empty() && p.is_relative())
      p = base / p;
  };
  anchor(c.rig);
  anchor(c.observations);
  anchor(c.reference_events);
  anchor(c.output_dir);
  if (c.model != "default-40" && fs::path(c.model).is_relative())
    c.model = (base / c.model).string();
  return c;
}

std::string fnv1a_hex(const std::string& bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes)
  {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const PipelineConfig& config)
{
  return fnv1a_hex(config_to_json(config).dump());
}

std::vector<std::string> resolve_keypoint_set(
    const std::string& spec, const std::vector<std::string>& available)
{
  if (spec.empty() || spec == "all" || spec == "dense-87")
    return available;
  std::vector<std::string> wanted;
  if (spec == "sparse-25")
    wanted = sparse_25_marker_names();
  else
  {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty())
        wanted.push_back(item);
  }
  for (const auto& w : wanted)
    if (std::find(available.begin(), available.end(), w) == available.end())
      throw ConfigError("keypoint '" + w + "' is not in the observations");
  return wanted;
}

Eigen::MatrixXd target_weights(const WeightField& weights)
{
  const std::vector<double> pw = point_weights(weights);
  Eigen::MatrixXd W(weights.n_frames, weights.n_joints);
  for (std::size_t t = 0; t < weights.n_frames; ++t)
    for (std::size_t j = 0; j < weights.n_joints; ++j)
      W(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = pw[t * weights.n_joints + j];
  return W;
}

void save_weight_field(const WeightField& w, const ObservationSet& obs, const fs::path& path)
{
  json values = json::array();
  for (std::size_t t = 0; t < w.n_frames; ++t)
  {
    json frame = json::array();
    for (std::size_t c = 0; c < w.n_cameras; ++c)
    {
      json row = json::array();
      for (std::size_t j = 0; j < w.n_joints; ++j)
        row.push_back(w(t, c, j));
      frame.push_back(std::move(row));
    }
    values.push_back(std::move(frame));
  }
  json doc;
  doc["camera_names"] = obs.camera_names();
  doc["joint_names"] = obs.joint_names();
  doc["values"] = std::move(values);
  json_util::write_file(path, doc);
}

WeightField load_weight_field(const ObservationSet& obs, const fs::path& path)
{
  const json doc = json_util::read_file(path);
  const std::string ctx = path.string();
  if (json_util::get<std::vector<std::string>>(doc, "camera_names", ctx) != obs.camera_names())
    throw CameraMismatch(ctx + ": camera names differ from the observations");
  if (json_util::get<std::vector<std::string>>(doc, "joint_names", ctx) != obs.joint_names())
    throw ShapeMismatch(ctx + ": joint names differ from the observations");
  const auto values = json_util::get<std::vector<std::vector<std::vector<double>>>>(doc, "values", ctx);
  WeightField w(obs.n_frames(), obs.n_cameras(), obs.n_joints());
  if (values.size() != w.n_frames)
    throw ShapeMismatch(ctx + ": frame count differs from the observations");
  for (std::size_t t = 0; t < w.n_frames; ++t)
  {
    if (values[t].size() != w.n_cameras)
      throw ShapeMismatch(ctx + ": camera count differs");
    for (std::size_t c = 0; c < w.n_cameras; ++c)
    {
      if (values[t][c].size() != w.n_joints)
        throw ShapeMismatch(ctx + ": joint count differs");
      for (std::size_t j = 0; j < w.n_joints; ++j)
        w(t, c, j) = values[t][c][j];
    }
  }
  return w;
}

PipelineResult run_pipeline(const PipelineConfig& config)
{
  config.validate();
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  PipelineResult result;
  auto record = [&](const fs::path& p) { result.artifacts.push_back(p); };

  const CameraRig rig = stage("load", [&] { return load_rig(config.rig); });
  const SkeletonModel model = stage("load", [&] { return resolve_model(config.model); });
  ObservationSet obs = stage("load", [&] { return load_observations(config.observations); });
  const std::vector<std::string> names = resolve_keypoint_set(config.keypoint_set, obs.joint_names());
  if (names != obs.joint_names())
    obs = obs.select_joints(names, config.keypoint_set);

  const ObservationSet gated = stage("gate", [&] {
    ObservationSet g = gate_observations(obs, rig, config.min_confidence);
    save_observations(g, out / "gated_observations.jsonl");
    return g;
  });
  record(out / "gated_observations.jsonl");

  const RobustTriangulation robust = stage("weights", [&] {
    RobustTriangulation rt = robust_triangulate_trajectory(gated, rig, config.robust);
    save_weight_field(rt.weights, gated, out / "weights.json");
    save_trajectory(rt.trajectory, out / "triangulated.json", &rt.weights, &gated.camera_names());
    return rt;
  });
  record(out / "weights.json");
  record(out / "triangulated.json");
  result.weights = robust.weights;

  Eigen::MatrixXd target_w;
  if (config.source == TrajectorySource::Implicit)
  {
    result.targets = stage("fit-trajectory", [&] {
      FitConfig fit = config.fit;
      fit.seed = config.seed;
      fit.bone_edges = rigid_marker_pairs(model, names);
      const FitResult fr = fit_trajectory(gated, rig, robust.weights, fit);
      save_implicit(fr.model, &fr.report, out / "implicit.json");
      return fr.model.sample(gated.timestamps());
    });
    record(out / "implicit.json");
    record(out / "implicit.params.bin");
    target_w = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(result.targets.n_frames()),
                                     static_cast<Eigen::Index>(result.targets.n_joints()));
  }
  else
  {
    result.targets = robust.trajectory;
    target_w = target_weights(robust.weights);
  }
  save_trajectory(result.targets, out / "targets.json");
  record(out / "targets.json");

  if (config.run_ik)
  {
    result.ik = stage("ik", [&] {
      IKConfig ik = config.ik;
      ik.seed = config.seed;
      IKSolution sol = solve_ik(model, {IKTrial{result.targets, target_w}}, ik);
      save_ik_solution(model, sol, out / "ik");
      return sol;
    });
    record(out / "ik" / "calibration.json");
    record(out / "ik" / "poses.csv");
    record(out / "ik" / "ik_diagnostics.json");
  }

  if (config.run_ik && config.run_metrics)
  {
    result.metrics = stage("metrics", [&] {
      const IKSolution& sol = *result.ik;
      const PointTrajectory predicted = predicted_markers(model, sol.calib, sol.poses[0], names);
      save_trajectory(predicted, out / "predicted_markers.json");
      MetricsReport m;
      m.marker_err_mm = residual_marker_error(predicted, result.targets);
      m.pose_noise = pose_noise(sol.poses[0]);
      m.gc_lambda = config.gc_lambda;
      for (double d : config.gc_thresholds_px)
        m.gc[d] = geometric_consistency(predicted, gated, rig, robust.weights, d, config.gc_lambda);
      m.violations = violation_fractions(model, sol.poses[0]);
      if (!config.reference_events.empty())
      {
        const auto reference = load_events(config.reference_events);
        const auto estimated = sample_events(model, sol.calib, sol.poses[0], reference);
        save_events(estimated, out / "events_estimated.json");
        m.gait = gait_error_stats(estimated, reference, config.match_tolerance_s);
      }
      save_metrics(m, out / "metrics.json");
      return m;
    });
    record(out / "predicted_markers.json");
    if (!config.reference_events.empty())
      record(out / "events_estimated.json");
    record(out / "metrics.json");
  }

  json manifest;
  manifest["version"] = kVersion;
  manifest["config_hash"] = config_hash(config);
  manifest["seed"] = config.seed;
  manifest["config"] = config_to_json(config);
  json files = json::array();
  for (const auto& p : result.artifacts)
    files.push_back({{"file", fs::relative(p, out).generic_string()},
                     {"fnv1a", fnv1a_hex(json_util::read_text(p))}});
  manifest["artifacts"] = files;
  json_util::write_file(out / "manifest.json", manifest);
  record(out / "manifest.json");
  return result;
}

std::string comparison_table(const std::vector<ComparisonRow>& rows)
{
  std::set<double> thresholds;
  for (const auto& r : rows)
    for (const auto& [d, v] : r.metrics.gc)
      thresholds.insert(d);
  auto fmt = [](const std::optional<double>& v) {
    if (!v)
      return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", *v);
    return std::string(buf);
  };
  std::string out = "label,marker_err_mm,pose_noise";
  for (double d : thresholds)
    out += ",gc_" + fmt(d);
  out += ",v0,v50,v100,step_length_sigma_iqr_mm,stride_length_sigma_iqr_mm,step_width_sigma_iqr_mm\n";
  for (const auto& r : rows)
  {
    const auto& m = r.metrics;
    out += r.label + "," + fmt(m.marker_err_mm) + "," + fmt(m.pose_noise);
    for (double d : thresholds)
    {
      const auto it = m.gc.find(d);
      out += "," + fmt(it == m.gc.end() ? std::nullopt : it->second);
    }
    out += "," + fmt(m.violations.v0) + "," + fmt(m.violations.v50) + "," + fmt(m.violations.v100);
    if (m.gait)
      out += "," + fmt(m.gait->step_length_mm) + "," + fmt(m.gait->stride_length_mm) + ","
             + fmt(m.gait->step_width_mm);
    else
      out += ",NA,NA,NA";
    out += "\n";
  }
  return out;
}

std::vector<ComparisonRow> run_comparison(
    const std::vector<std::pair<std::string, PipelineConfig>>& configs,
    const fs::path& table_path)
{
  std::vector<ComparisonRow> rows;
  for (const auto& [label, config] : configs)
  {
    const PipelineResult r = run_pipeline(config);
    rows.push_back({label, r.metrics});
  }
  json_util::write_text(table_path, comparison_table(rows));
  return rows;
}

} // namespace mocap
