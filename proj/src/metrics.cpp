#include "mocap/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

using json_util::json;

std::optional<double> geometric_consistency(
    const PointTrajectory& predicted,
    const ObservationSet& obs,
    const CameraRig& rig,
    const WeightField& weights,
    double d_px,
    double lambda)
{
  check_camera_alignment(obs, rig);
  if (predicted.n_frames() != obs.n_frames())
    throw ShapeMismatch("predicted trajectory and observations differ in frame count");
  if (weights.n_frames != obs.n_frames() || weights.n_cameras != obs.n_cameras()
      || weights.n_joints != obs.n_joints())
    throw ShapeMismatch("weight field does not match observations");
  std::vector<int> map;
  for (const auto& name : obs.joint_names())
    map.push_back(predicted.find(name));

  std::size_t num = 0, den = 0;
  Eigen::Vector2d px;
  for (std::size_t t = 0; t < obs.n_frames(); ++t)
    for (std::size_t c = 0; c < obs.n_cameras(); ++c)
      for (std::size_t j = 0; j < obs.n_joints(); ++j)
      {
        if (!(weights(t, c, j) > lambda))
          continue;
        ++den;
        const int pj = map[j];
        if (pj < 0 || !obs.present(t, c, j) || !predicted.is_valid(t, pj))
          continue;
        if (!project_with_jacobian(rig.cameras[c], predicted.at(t, pj), px, nullptr))
          continue;
        if ((px - obs.pixel(t, c, j)).norm() < d_px)
          ++num;
      }
  if (den == 0)
    return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> residual_marker_error(
    const PointTrajectory& predicted, const PointTrajectory& targets)
{
  if (predicted.n_frames() != targets.n_frames())
    throw ShapeMismatch("trajectories differ in frame count");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < targets.n_joints(); ++j)
  {
    const int pj = predicted.find(targets.joint_names[j]);
    if (pj < 0)
      continue;
    for (std::size_t t = 0; t < targets.n_frames(); ++t)
      if (targets.is_valid(t, j) && predicted.is_valid(t, pj))
      {
        sum += (predicted.at(t, pj) - targets.at(t, j)).norm();
        ++n;
      }
  }
  if (n == 0)
    return std::nullopt;
  return 1000.0 * sum / static_cast<double>(n);
}

ViolationFractions violation_fractions(const SkeletonModel& model, const PoseSequence& poses)
{
  ViolationFractions v;
  std::size_t samples = 0, c0 = 0, c50 = 0, c100 = 0;
  for (const auto& q : poses.poses)
  {
    const Eigen::VectorXd excess = joint_limit_excess(model, q);
    for (std::size_t d = 0; d < model.dof_count(); ++d)
    {
      const DofInfo& info = model.dofs()[d];
      if (!info.limited)
        continue;
      ++samples;
      const double e = excess[static_cast<Eigen::Index>(d)];
      const double range = info.upper - info.lower;
      c0 += e > 0.0;
      c50 += e > 0.5 * range;
      c100 += e > range;
    }
  }
  if (samples == 0)
    return v;
  const auto n = static_cast<double>(samples);
  v.v0 = static_cast<double>(c0) / n;
  v.v50 = static_cast<double>(c50) / n;
  v.v100 = static_cast<double>(c100) / n;
  return v;
}

double pose_noise(const PoseSequence& poses)
{
  if (poses.size() < 2)
    return 0.0;
  const auto D = poses.poses.front().size();
  if (D == 0)
    return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t + 1 < poses.size(); ++t)
    sum += (poses.poses[t + 1] - poses.poses[t]).squaredNorm();
  return sum / (static_cast<double>(D) * static_cast<double>(poses.size() - 1));
}

double quantile(std::vector<double> samples, double q)
{
  if (samples.empty())
    throw ValidationError("quantile of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return samples[lo] + frac * (samples[hi] - samples[lo]);
}

double sigma_iqr(const std::vector<double>& samples)
{
  return 0.7413 * (quantile(samples, 0.75) - quantile(samples, 0.25));
}

//==============================================================================
namespace {

std::vector<double> collect(const std::vector<GaitRow>& rows, std::optional<double> GaitRow::*field)
{
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.*field)
      out.push_back(*(r.*field));
  return out;
}

} // namespace

std::vector<double> GaitParameters::step_lengths() const
{
  return collect(rows, &GaitRow::step_length);
}
std::vector<double> GaitParameters::step_widths() const
{
  return collect(rows, &GaitRow::step_width);
}
std::vector<double> GaitParameters::stride_lengths() const
{
  return collect(rows, &GaitRow::stride_length);
}

GaitParameters gait_parameters(const std::vector<GaitEvent>& events)
{
  if (events.size() < 3)
    throw TooFewEvents("gait parameters need at least 3 contacts, got "
                       + std::to_string(events.size()));
  std::vector<GaitEvent> sorted = events;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const GaitEvent& a, const GaitEvent& b) { return a.time_s < b.time_s; });

  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (Foot foot : {Foot::Left, Foot::Right})
  {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    int n = 0;
    for (const auto& e : sorted)
      if (e.foot == foot)
      {
        mean += e.position.head<2>();
        ++n;
      }
    if (n == 0)
      continue;
    mean /= n;
    for (const auto& e : sorted)
      if (e.foot == foot)
      {
        const Eigen::Vector2d d = e.position.head<2>() - mean;
        cov += d * d.transpose();
      }
  }
  GaitParameters out;
  if (cov.norm() > 0.0)
  {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    out.direction = es.eigenvectors().col(1);
  }
  const Eigen::Vector2d across(-out.direction.y(), out.direction.x());

  for (std::size_t i = 0; i < sorted.size(); ++i)
  {
    GaitRow row;
    row.event = sorted[i];
    if (i > 0 && sorted[i - 1].foot != sorted[i].foot)
    {
      const Eigen::Vector2d d = (sorted[i].position - sorted[i - 1].position).head<2>();
      row.step_length = std::abs(d.dot(out.direction));
      row.step_width = std::abs(d.dot(across));
    }
    for (std::size_t k = i; k-- > 0;)
      if (sorted[k].foot == sorted[i].foot)
      {
        const Eigen::Vector2d d = (sorted[i].position - sorted[k].position).head<2>();
        row.stride_length = std::abs(d.dot(out.direction));
        break;
      }
    out.rows.push_back(std::move(row));
  }
  return out;
}

GaitParameters gait_parameters(const std::vector<GaitEvent>& left, const std::vector<GaitEvent>& right)
{
  std::vector<GaitEvent> all = left;
  for (auto e : left)
    if (e.foot != Foot::Left)
      throw ValidationError("left event list contains a right-foot event");
  for (const auto& e : right)
  {
    if (e.foot != Foot::Right)
      throw ValidationError("right event list contains a left-foot event");
    all.push_back(e);
  }
  return gait_parameters(all);
}

GaitErrorStats gait_error_stats(
    const std::vector<GaitEvent>& estimated,
    const std::vector<GaitEvent>& reference,
    double match_tolerance_s)
{
  const GaitParameters est = gait_parameters(estimated);
  const GaitParameters ref = gait_parameters(reference);
  std::vector<double> step, stride, width;
  GaitErrorStats stats;
  for (const auto& r : ref.rows)
  {
    const GaitRow* best = nullptr;
    double best_dt = match_tolerance_s;
    for (const auto& e : est.rows)
    {
      if (e.event.foot != r.event.foot)
        continue;
      const double dt = std::abs(e.event.time_s - r.event.time_s);
      if (dt <= best_dt)
      {
        best_dt = dt;
        best = &e;
      }
    }
    if (!best)
      continue;
    ++stats.matched;
    if (r.step_length && best->step_length)
      step.push_back(1000.0 * (*best->step_length - *r.step_length));
    if (r.step_width && best->step_width)
      width.push_back(1000.0 * (*best->step_width - *r.step_width));
    if (r.stride_length && best->stride_length)
      stride.push_back(1000.0 * (*best->stride_length - *r.stride_length));
  }
  if (!step.empty())
    stats.step_length_mm = sigma_iqr(step);
  if (!stride.empty())
    stats.stride_length_mm = sigma_iqr(stride);
  if (!width.empty())
    stats.step_width_mm = sigma_iqr(width);
  return stats;
}

std::vector<GaitEvent> detect_heel_strikes(
    const std::vector<double>& times,
    const std::vector<Eigen::Vector3d>& heel,
    Foot foot,
    double max_speed)
{
  if (times.size() != heel.size())
    throw ShapeMismatch("heel positions and times differ in length");
  std::vector<GaitEvent> out;
  for (std::size_t i = 1; i + 1 < heel.size(); ++i)
  {
    const double z = heel[i].z();
    if (!(z <= heel[i - 1].z() && z < heel[i + 1].z()))
      continue;
    const double speed = (heel[i + 1] - heel[i - 1]).norm() / (times[i + 1] - times[i - 1]);
    if (speed < max_speed)
      out.push_back({times[i], foot, heel[i]});
  }
  return out;
}

std::vector<Eigen::Vector3d> heel_positions(
    const SkeletonModel& model, const ModelCalibration& calib, const PoseSequence& poses, Foot foot)
{
  const int body = model.body_index(foot == Foot::Left ? "calcn_l" : "calcn_r");
  if (body < 0)
    throw ShapeMismatch("model has no calcaneus body");
  std::vector<Eigen::Vector3d> out;
  for (const auto& q : poses.poses)
    out.push_back(compute_kinematics(model, calib, q).body_origin[body]);
  return out;
}

std::vector<GaitEvent> sample_events(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const PoseSequence& poses,
    const std::vector<GaitEvent>& at)
{
  if (poses.size() == 0)
    throw ShapeMismatch("empty pose sequence");
  const auto left = heel_positions(model, calib, poses, Foot::Left);
  const auto right = heel_positions(model, calib, poses, Foot::Right);
  const auto& ts = poses.timestamps;
  std::vector<GaitEvent> out;
  for (const auto& e : at)
  {
    const auto& heel = e.foot == Foot::Left ? left : right;
    const auto it = std::upper_bound(ts.begin(), ts.end(), e.time_s);
    Eigen::Vector3d p;
    if (it == ts.begin())
      p = heel.front();
    else if (it == ts.end())
      p = heel.back();
    else
    {
      const auto i = static_cast<std::size_t>(it - ts.begin());
      const double a = (e.time_s - ts[i - 1]) / (ts[i] - ts[i - 1]);
      p = (1.0 - a) * heel[i - 1] + a * heel[i];
    }
    out.push_back({e.time_s, e.foot, p});
  }
  return out;
}

//==============================================================================
namespace {

json optional_json(const std::optional<double>& v)
{
  return v ? json(*v) : json(nullptr);
}

std::optional<double> optional_from(const json& doc, const char* key)
{
  if (!doc.contains(key) || doc.at(key).is_null())
    return std::nullopt;
  return doc.at(key).get<double>();
}

} // namespace

void save_metrics(const MetricsReport& report, const std::filesystem::path& path)
{
  json doc;
  doc["marker_err_mm"] = optional_json(report.marker_err_mm);
  doc["pose_noise"] = report.pose_noise;
  json gc = json::array();
  for (const auto& [d, v] : report.gc)
    gc.push_back({{"d_px", d}, {"value", optional_json(v)}});
  doc["gc"] = gc;
  doc["gc_lambda"] = report.gc_lambda;
  doc["violations"] = {
      {"v0", report.violations.v0},
      {"v50", report.violations.v50},
      {"v100", report.violations.v100},
  };
  if (report.gait)
    doc["gait_sigma_iqr_mm"] = {
        {"step_length", optional_json(report.gait->step_length_mm)},
        {"stride_length", optional_json(report.gait->stride_length_mm)},
        {"step_width", optional_json(report.gait->step_width_mm)},
        {"matched", report.gait->matched},
    };
  else
    doc["gait_sigma_iqr_mm"] = nullptr;
  json_util::write_file(path, doc);
}

MetricsReport load_metrics(const std::filesystem::path& path)
{
  const json doc = json_util::read_file(path);
  const std::string ctx = path.string();
  MetricsReport r;
  try
  {
    r.marker_err_mm = optional_from(doc, "marker_err_mm");
    r.pose_noise = json_util::get<double>(doc, "pose_noise", ctx);
    for (const auto& g : json_util::field(doc, "gc", ctx))
      r.gc[json_util::get<double>(g, "d_px", ctx)] = optional_from(g, "value");
    r.gc_lambda = json_util::get_or<double>(doc, "gc_lambda", 0.5, ctx);
    const json& v = json_util::field(doc, "violations", ctx);
    r.violations = {json_util::get<double>(v, "v0", ctx), json_util::get<double>(v, "v50", ctx),
                    json_util::get<double>(v, "v100", ctx)};
    if (doc.contains("gait_sigma_iqr_mm") && !doc.at("gait_sigma_iqr_mm").is_null())
    {
      const json& g = doc.at("gait_sigma_iqr_mm");
      GaitErrorStats s;
      s.step_length_mm = optional_from(g, "step_length");
      s.stride_length_mm = optional_from(g, "stride_length");
      s.step_width_mm = optional_from(g, "step_width");
      s.matched = json_util::get<std::size_t>(g, "matched", ctx);
      r.gait = s;
    }
  }
  catch (const json::exception& e)
  {
    throw ParseError(ctx + ": " + e.what());
  }
  return r;
}

void save_events(const std::vector<GaitEvent>& events, const std::filesystem::path& path)
{
  json doc = json::array();
  for (const auto& e : events)
    doc.push_back({
        {"time_s", e.time_s},
        {"foot", e.foot == Foot::Left ? "L" : "R"},
        {"position", {e.position.x(), e.position.y(), e.position.z()}},
    });
  json_util::write_file(path, doc);
}

std::vector<GaitEvent> load_events(const std::filesystem::path& path)
{
  const json doc = json_util::read_file(path);
  const std::string ctx = path.string();
  if (!doc.is_array())
    throw ParseError(ctx + ": expected a list of events");
  std::vector<GaitEvent> out;
  for (const auto& rec : doc)
  {
    GaitEvent e;
    e.time_s = json_util::get<double>(rec, "time_s", ctx);
    const auto foot = json_util::get<std::string>(rec, "foot", ctx);
    if (foot == "L")
      e.foot = Foot::Left;
    else if (foot == "R")
      e.foot = Foot::Right;
    else
      throw ParseError(ctx + ": foot must be L or R, got '" + foot + "'");
    e.position = json_util::vec<3>(rec, "position", ctx);
    out.push_back(e);
  }
  return out;
}

} // namespace mocap
