#include "mocap/triangulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

using json_util::json;

WeightField WeightField::from_confidence(const ObservationSet& obs)
{
  WeightField w(obs.n_frames(), obs.n_cameras(), obs.n_joints());
  for (std::size_t t = 0; t < obs.n_frames(); ++t)
    for (std::size_t c = 0; c < obs.n_cameras(); ++c)
      for (std::size_t j = 0; j < obs.n_joints(); ++j)
        w(t, c, j) = obs.present(t, c, j) ? obs.confidence(t, c, j) : 0.0;
  return w;
}

PointTrajectory::PointTrajectory(std::vector<std::string> names, std::vector<double> times)
  : joint_names(std::move(names)), timestamps(std::move(times))
{
  points.assign(timestamps.size() * joint_names.size(), Eigen::Vector3d::Zero());
  valid.assign(points.size(), 0);
}

int PointTrajectory::find(const std::string& name) const
{
  auto it = std::find(joint_names.begin(), joint_names.end(), name);
  return it == joint_names.end() ? -1 : static_cast<int>(it - joint_names.begin());
}

namespace {

/// Ray geometry in the form used by the normal equations:
/// projector P = I - d d^T and P * origin.
struct RayTerm
{
  Eigen::Matrix3d projector;
  Eigen::Vector3d projected_origin;
};

RayTerm make_ray_term(const Camera& camera, const Eigen::Vector2d& pixel)
{
  const Eigen::Vector2d n = pixel_to_normalized(camera, pixel);
  const Eigen::Vector3d d = (camera.rotation.transpose() * Eigen::Vector3d(n.x(), n.y(), 1.0)).normalized();
  RayTerm term;
  term.projector = Eigen::Matrix3d::Identity() - d * d.transpose();
  term.projected_origin = term.projector * camera.center();
  return term;
}

/// Solves the accumulated normal equations. Returns false on a singular or
/// ill-conditioned system.
bool solve_normal(
    const Eigen::Matrix3d& A, const Eigen::Vector3d& b, Eigen::Vector3d& x, double* condition)
{
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(A);
  const Eigen::Vector3d ev = es.eigenvalues();
  const double cond = ev(0) > 0.0 ? ev(2) / ev(0) : std::numeric_limits<double>::infinity();
  if (condition)
    *condition = cond;
  if (!(cond <= kMaxDltCondition))
    return false;
  x = es.eigenvectors() * (es.eigenvectors().transpose() * b).cwiseQuotient(ev);
  return true;
}

double kernel(double r, double r0)
{
  if (!std::isfinite(r))
    return 0.0;
  const double u = r / r0;
  return 1.0 / (1.0 + u * u);
}

/// Per-cell scratch data shared by the weighting iterations.
struct CellRays
{
  std::vector<RayTerm> terms;
  std::vector<unsigned char> usable;
};

} // namespace

DltResult triangulate_dlt(std::span<const Ray> rays)
{
  int positive = 0;
  for (const auto& r : rays)
    if (r.weight > 0.0)
      ++positive;
  if (positive < 2)
    throw InsufficientViews(
        "triangulation needs at least 2 weighted views, got " + std::to_string(positive));

  Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  for (const auto& r : rays)
  {
    if (!(r.weight > 0.0))
      continue;
    const RayTerm term = make_ray_term(*r.camera, r.pixel);
    A += r.weight * term.projector;
    b += r.weight * term.projected_origin;
  }
  DltResult out;
  if (!solve_normal(A, b, out.point, &out.condition))
    throw DegenerateGeometry(
        "normal matrix condition number " + std::to_string(out.condition) + " exceeds 1e12");

  double wsum = 0.0, rsum = 0.0;
  for (const auto& r : rays)
  {
    if (!(r.weight > 0.0))
      continue;
    Eigen::Vector2d px;
    if (!project_with_jacobian(*r.camera, out.point, px, nullptr))
      continue;
    wsum += r.weight;
    rsum += r.weight * (px - r.pixel).norm();
  }
  out.residual_px = wsum > 0.0 ? rsum / wsum : 0.0;
  return out;
}

namespace {

void weigh_cell(
    const ObservationSet& obs,
    const CameraRig& rig,
    const RobustWeightConfig& config,
    std::size_t t,
    std::size_t j,
    CellRays& scratch,
    WeightField& out)
{
  const std::size_t C = obs.n_cameras();
  scratch.terms.resize(C);
  scratch.usable.assign(C, 0);
  std::vector<double> conf(C, 0.0);
  int usable = 0;
  for (std::size_t c = 0; c < C; ++c)
  {
    if (!obs.present(t, c, j) || !(obs.confidence(t, c, j) > 0.0))
      continue;
    try
    {
      scratch.terms[c] = make_ray_term(rig.cameras[c], obs.pixel(t, c, j));
    }
    catch (const NoConvergence&)
    {
      continue;
    }
    scratch.usable[c] = 1;
    conf[c] = obs.confidence(t, c, j);
    ++usable;
  }
  if (usable < 2)
    return;

  std::vector<double> w = conf;
  if (usable > 2)
  {
    std::vector<double> next(C, 0.0);
    for (int it = 0; it < config.iterations; ++it)
    {
      Eigen::Matrix3d A_all = Eigen::Matrix3d::Zero();
      Eigen::Vector3d b_all = Eigen::Vector3d::Zero();
      for (std::size_t c = 0; c < C; ++c)
        if (scratch.usable[c] && w[c] > 0.0)
        {
          A_all += w[c] * scratch.terms[c].projector;
          b_all += w[c] * scratch.terms[c].projected_origin;
        }
      for (std::size_t c = 0; c < C; ++c)
      {
        next[c] = 0.0;
        if (!scratch.usable[c])
          continue;
        int others = 0;
        for (std::size_t k = 0; k < C; ++k)
          if (k != c && scratch.usable[k] && w[k] > 0.0)
            ++others;
        double r = std::numeric_limits<double>::infinity();
        if (others >= 2)
        {
          Eigen::Matrix3d A = A_all;
          Eigen::Vector3d b = b_all;
          if (w[c] > 0.0)
          {
            A -= w[c] * scratch.terms[c].projector;
            b -= w[c] * scratch.terms[c].projected_origin;
          }
          Eigen::Vector3d x;
          Eigen::Vector2d px;
          if (solve_normal(A, b, x, nullptr)
              && project_with_jacobian(rig.cameras[c], x, px, nullptr))
            r = (px - obs.pixel(t, c, j)).norm();
        }
        next[c] = std::clamp(conf[c] * kernel(r, config.kernel_scale_px), 0.0, 1.0);
      }
      w.swap(next);
    }
  }
  for (std::size_t c = 0; c < C; ++c)
    out(t, c, j) = scratch.usable[c] ? std::clamp(w[c], 0.0, 1.0) : 0.0;
}

} // namespace

WeightField robust_weights(
    const ObservationSet& obs, const CameraRig& rig, const RobustWeightConfig& config)
{
  check_camera_alignment(obs, rig);
  WeightField out(obs.n_frames(), obs.n_cameras(), obs.n_joints());
  CellRays scratch;
  for (std::size_t t = 0; t < obs.n_frames(); ++t)
    for (std::size_t j = 0; j < obs.n_joints(); ++j)
      weigh_cell(obs, rig, config, t, j, scratch, out);
  return out;
}

PointTrajectory triangulate_with_weights(
    const ObservationSet& obs, const CameraRig& rig, const WeightField& weights)
{
  check_camera_alignment(obs, rig);
  if (weights.n_frames != obs.n_frames() || weights.n_cameras != obs.n_cameras()
      || weights.n_joints != obs.n_joints())
    throw ShapeMismatch("weight field does not match observations");
  PointTrajectory traj(obs.joint_names(), obs.timestamps());
  std::vector<Ray> rays;
  for (std::size_t t = 0; t < obs.n_frames(); ++t)
    for (std::size_t j = 0; j < obs.n_joints(); ++j)
    {
      rays.clear();
      for (std::size_t c = 0; c < obs.n_cameras(); ++c)
        if (obs.present(t, c, j) && weights(t, c, j) > 0.0)
          rays.push_back({&rig.cameras[c], obs.pixel(t, c, j), weights(t, c, j)});
      if (rays.size() < 2)
        continue;
      try
      {
        traj.set(t, j, triangulate_dlt(rays).point);
      }
      catch (const Error&)
      {
        // Underdetermined cells stay absent.
      }
    }
  return traj;
}

RobustTriangulation robust_triangulate_trajectory(
    const ObservationSet& obs, const CameraRig& rig, const RobustWeightConfig& config)
{
  RobustTriangulation out;
  out.weights = robust_weights(obs, rig, config);
  out.trajectory = triangulate_with_weights(obs, rig, out.weights);
  return out;
}

std::vector<double> point_weights(const WeightField& weights)
{
  std::vector<double> out(weights.n_frames * weights.n_joints, 0.0);
  if (weights.n_cameras == 0)
    return out;
  for (std::size_t t = 0; t < weights.n_frames; ++t)
    for (std::size_t j = 0; j < weights.n_joints; ++j)
    {
      double s = 0.0;
      for (std::size_t c = 0; c < weights.n_cameras; ++c)
        s += weights(t, c, j);
      out[t * weights.n_joints + j] = s / static_cast<double>(weights.n_cameras);
    }
  return out;
}

//==============================================================================
// File format

void save_trajectory(
    const PointTrajectory& traj,
    const std::filesystem::path& path,
    const WeightField* weights,
    const std::vector<std::string>* camera_names)
{
  json doc;
  doc["joint_names"] = traj.joint_names;
  doc["timestamps"] = traj.timestamps;
  json frames = json::array();
  for (std::size_t t = 0; t < traj.n_frames(); ++t)
  {
    json row = json::array();
    for (std::size_t j = 0; j < traj.n_joints(); ++j)
    {
      if (traj.is_valid(t, j))
        row.push_back(json_util::to_array(traj.at(t, j)));
      else
        row.push_back(nullptr);
    }
    frames.push_back(std::move(row));
  }
  doc["frames"] = std::move(frames);
  if (weights)
  {
    if (weights->n_frames != traj.n_frames() || weights->n_joints != traj.n_joints())
      throw ShapeMismatch("weight field does not match trajectory");
    json w;
    if (camera_names)
      w["camera_names"] = *camera_names;
    json values = json::array();
    for (std::size_t t = 0; t < weights->n_frames; ++t)
    {
      json row = json::array();
      for (std::size_t j = 0; j < weights->n_joints; ++j)
      {
        json cams = json::array();
        for (std::size_t c = 0; c < weights->n_cameras; ++c)
          cams.push_back((*weights)(t, c, j));
        row.push_back(std::move(cams));
      }
      values.push_back(std::move(row));
    }
    w["values"] = std::move(values);
    doc["weights"] = std::move(w);
  }
  json_util::write_text(path, doc.dump() + "\n");
}

LoadedTrajectory load_trajectory(const std::filesystem::path& path)
{
  const json doc = json_util::read_file(path);
  const std::string ctx = path.string();
  LoadedTrajectory out;
  out.trajectory = PointTrajectory(
      json_util::get<std::vector<std::string>>(doc, "joint_names", ctx),
      json_util::get<std::vector<double>>(doc, "timestamps", ctx));
  auto& traj = out.trajectory;
  const json& frames = json_util::field(doc, "frames", ctx);
  if (!frames.is_array() || frames.size() != traj.n_frames())
    throw ParseError(ctx + ": 'frames' must have one row per timestamp");
  for (std::size_t t = 0; t < traj.n_frames(); ++t)
  {
    const json& row = frames[t];
    if (!row.is_array() || row.size() != traj.n_joints())
      throw ParseError(ctx + ": frames[" + std::to_string(t) + "] has the wrong length");
    for (std::size_t j = 0; j < traj.n_joints(); ++j)
    {
      const json& p = row[j];
      if (p.is_null())
        continue;
      if (!p.is_array() || p.size() != 3)
        throw ParseError(ctx + ": frames[" + std::to_string(t) + "][" + std::to_string(j) + "]");
      traj.set(t, j, Eigen::Vector3d(p[0].get<double>(), p[1].get<double>(), p[2].get<double>()));
    }
  }
  if (doc.contains("weights"))
  {
    const json& w = doc["weights"];
    out.camera_names = json_util::get_or<std::vector<std::string>>(w, "camera_names", {}, ctx);
    const json& values = json_util::field(w, "values", ctx + " weights");
    if (!values.is_array() || values.size() != traj.n_frames())
      throw ParseError(ctx + ": weights must have one row per frame");
    std::size_t C = 0;
    if (!values.empty() && !values[0].empty())
      C = values[0][0].size();
    WeightField wf(traj.n_frames(), C, traj.n_joints());
    for (std::size_t t = 0; t < traj.n_frames(); ++t)
    {
      if (values[t].size() != traj.n_joints())
        throw ParseError(ctx + ": weights row has the wrong length");
      for (std::size_t j = 0; j < traj.n_joints(); ++j)
      {
        const auto cams = values[t][j].get<std::vector<double>>();
        if (cams.size() != C)
          throw ParseError(ctx + ": inconsistent camera count in weights");
        for (std::size_t c = 0; c < C; ++c)
          wf(t, c, j) = cams[c];
      }
    }
    out.weights = std::move(wf);
  }
  return out;
}

} // namespace mocap
