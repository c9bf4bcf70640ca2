#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mocap {

/// Pinhole camera with a single radial distortion coefficient.
///
/// Extrinsics map world to camera: x_cam = rotation * x_world + translation.
/// Distortion scales normalized coordinates by (1 + k1 r^2) before the
/// intrinsics are applied.
struct Camera
{
  std::string name;
  Eigen::Vector2i image_size{0, 0};
  Eigen::Vector2d focal{1.0, 1.0};
  Eigen::Vector2d principal{0.0, 0.0};
  double k1 = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  bool in_image(const Eigen::Vector2d& px) const
  {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < image_size.x()
           && px.y() < image_size.y();
  }

  /// Throws ValidationError if an invariant does not hold.
  void validate() const;

  bool operator==(const Camera&) const = default;
};

struct CameraRig
{
  std::vector<Camera> cameras;
  double frame_rate = 30.0;

  std::size_t size() const { return cameras.size(); }
  std::vector<std::string> names() const;
  void validate() const;

  bool operator==(const CameraRig&) const = default;
};

/// Depth below which a point counts as behind the camera.
inline constexpr double kMinDepth = 1e-9;

/// Projects a world point to pixels. Throws NonPositiveDepth.
Eigen::Vector2d project(const Camera& camera, const Eigen::Vector3d& point);

/// Projection plus its 2x3 Jacobian with respect to the world point.
/// Returns false instead of throwing when the depth is not positive.
bool project_with_jacobian(
    const Camera& camera,
    const Eigen::Vector3d& point,
    Eigen::Vector2d& pixel,
    Eigen::Matrix<double, 2, 3>* jacobian);

/// Applies the radial factor to normalized coordinates.
Eigen::Vector2d distort_normalized(const Camera& camera, const Eigen::Vector2d& x);

/// Inverts distort_normalized by Newton iteration on the radius.
/// Throws NoConvergence after 50 iterations at tolerance 1e-12.
Eigen::Vector2d undistort_normalized(const Camera& camera, const Eigen::Vector2d& xd);

/// Pixel to undistorted normalized image coordinates.
Eigen::Vector2d pixel_to_normalized(const Camera& camera, const Eigen::Vector2d& px);

CameraRig load_rig(const std::filesystem::path& path);
void save_rig(const CameraRig& rig, const std::filesystem::path& path);

/// Rotation taking world vectors to the camera frame for a camera at `eye`
/// looking at `target`, with world +z as the up direction. Camera axes
/// follow the usual image convention (x right, y down, z forward).
Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye, const Eigen::Vector3d& target);

} // namespace mocap
