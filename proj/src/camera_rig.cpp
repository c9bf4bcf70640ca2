#include "mocap/camera_rig.hpp"

#include <cmath>
#include <set>

#include <Eigen/Geometry>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

using json_util::json;

void Camera::validate() const
{
  const std::string ctx = "camera '" + name + "'";
  if (name.empty())
    throw ValidationError("camera name must not be empty");
  if (image_size.x() <= 0 || image_size.y() <= 0)
    throw ValidationError(ctx + ": image_size must be positive");
  if (!(focal.x() > 0.0) || !(focal.y() > 0.0))
    throw ValidationError(ctx + ": focal lengths must be positive");
  if (!rotation.allFinite() || !translation.allFinite() || !std::isfinite(k1)
      || !principal.allFinite())
    throw ValidationError(ctx + ": non-finite parameters");
  const double orth
      = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (orth > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9)
    throw ValidationError(ctx + ": rotation is not a proper orthonormal matrix");
}

std::vector<std::string> CameraRig::names() const
{
  std::vector<std::string> out;
  out.reserve(cameras.size());
  for (const auto& c : cameras)
    out.push_back(c.name);
  return out;
}

void CameraRig::validate() const
{
  if (!(frame_rate > 0.0) || !std::isfinite(frame_rate))
    throw ValidationError("frame_rate must be positive");
  std::set<std::string> seen;
  for (const auto& c : cameras)
  {
    c.validate();
    if (!seen.insert(c.name).second)
      throw ValidationError("duplicate camera name '" + c.name + "'");
  }
}

Eigen::Vector2d distort_normalized(const Camera& camera, const Eigen::Vector2d& x)
{
  return (1.0 + camera.k1 * x.squaredNorm()) * x;
}

bool project_with_jacobian(
    const Camera& camera,
    const Eigen::Vector3d& point,
    Eigen::Vector2d& pixel,
    Eigen::Matrix<double, 2, 3>* jacobian)
{
  const Eigen::Vector3d pc = camera.rotation * point + camera.translation;
  if (!(pc.z() > kMinDepth))
    return false;
  const double iz = 1.0 / pc.z();
  const Eigen::Vector2d n(pc.x() * iz, pc.y() * iz);
  const double r2 = n.squaredNorm();
  const double f = 1.0 + camera.k1 * r2;
  pixel.x() = camera.focal.x() * f * n.x() + camera.principal.x();
  pixel.y() = camera.focal.y() * f * n.y() + camera.principal.y();
  if (jacobian)
  {
    Eigen::Matrix<double, 2, 3> dn_dpc;
    dn_dpc << iz, 0.0, -n.x() * iz, 0.0, iz, -n.y() * iz;
    const Eigen::Matrix2d dd_dn
        = f * Eigen::Matrix2d::Identity() + 2.0 * camera.k1 * n * n.transpose();
    const Eigen::Matrix2d K = camera.focal.asDiagonal();
    *jacobian = K * dd_dn * dn_dpc * camera.rotation;
  }
  return true;
}

Eigen::Vector2d project(const Camera& camera, const Eigen::Vector3d& point)
{
  Eigen::Vector2d px;
  if (!project_with_jacobian(camera, point, px, nullptr))
    throw NonPositiveDepth("point is behind camera '" + camera.name + "'");
  return px;
}

Eigen::Vector2d undistort_normalized(const Camera& camera, const Eigen::Vector2d& xd)
{
  const double rd = xd.norm();
  if (camera.k1 == 0.0 || rd == 0.0)
    return xd;
  // Solve r (1 + k1 r^2) = rd for the undistorted radius.
  double r = rd;
  for (int it = 0; it < 50; ++it)
  {
    const double g = r + camera.k1 * r * r * r - rd;
    const double dg = 1.0 + 3.0 * camera.k1 * r * r;
    if (!(std::abs(dg) > 0.0))
      break;
    const double step = g / dg;
    r -= step;
    if (std::abs(step) <= 1e-12 * std::max(1.0, r))
    {
      if (!std::isfinite(r) || r < 0.0)
        break;
      return xd * (r / rd);
    }
  }
  throw NoConvergence("radial undistortion did not converge for camera '" + camera.name + "'");
}

Eigen::Vector2d pixel_to_normalized(const Camera& camera, const Eigen::Vector2d& px)
{
  const Eigen::Vector2d xd(
      (px.x() - camera.principal.x()) / camera.focal.x(),
      (px.y() - camera.principal.y()) / camera.focal.y());
  return undistort_normalized(camera, xd);
}

Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye, const Eigen::Vector3d& target)
{
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ());
  if (right.norm() < 1e-12)
    right = Eigen::Vector3d::UnitX();
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = forward.transpose();
  return R;
}

//==============================================================================
// Calibration file

namespace {

Camera camera_from_json(const json& j, std::size_t index)
{
  const std::string ctx = "cameras[" + std::to_string(index) + "]";
  Camera c;
  c.name = json_util::get<std::string>(j, "name", ctx);
  const auto size = json_util::vec<2>(j, "image_size", ctx);
  c.image_size = Eigen::Vector2i(static_cast<int>(size.x()), static_cast<int>(size.y()));
  if (size.x() != c.image_size.x() || size.y() != c.image_size.y())
    throw ParseError(ctx + ": image_size must be integral");
  c.focal = json_util::vec<2>(j, "focal", ctx);
  c.principal = json_util::vec<2>(j, "principal", ctx);
  c.k1 = json_util::get<double>(j, "k1", ctx);
  const auto r = json_util::get<std::vector<double>>(j, "rotation", ctx);
  if (r.size() != 9)
    throw ParseError(ctx + ": field 'rotation' must have 9 entries");
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col)
      c.rotation(row, col) = r[3 * row + col];
  c.translation = json_util::vec<3>(j, "translation", ctx);
  return c;
}

} // namespace

CameraRig load_rig(const std::filesystem::path& path)
{
  const json doc = json_util::read_file(path);
  const std::string ctx = path.string();
  CameraRig rig;
  rig.frame_rate = json_util::get<double>(doc, "frame_rate", ctx);
  const json& cams = json_util::field(doc, "cameras", ctx);
  if (!cams.is_array())
    throw ParseError(ctx + ": field 'cameras' must be a list");
  for (std::size_t i = 0; i < cams.size(); ++i)
    rig.cameras.push_back(camera_from_json(cams[i], i));
  rig.validate();
  return rig;
}

void save_rig(const CameraRig& rig, const std::filesystem::path& path)
{
  json doc;
  doc["frame_rate"] = rig.frame_rate;
  doc["cameras"] = json::array();
  for (const auto& c : rig.cameras)
  {
    json j;
    j["name"] = c.name;
    j["image_size"] = {c.image_size.x(), c.image_size.y()};
    j["focal"] = {c.focal.x(), c.focal.y()};
    j["principal"] = {c.principal.x(), c.principal.y()};
    j["k1"] = c.k1;
    json rot = json::array();
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col)
        rot.push_back(c.rotation(row, col));
    j["rotation"] = rot;
    j["translation"] = json_util::to_array(c.translation);
    doc["cameras"].push_back(j);
  }
  json_util::write_file(path, doc);
}

} // namespace mocap
