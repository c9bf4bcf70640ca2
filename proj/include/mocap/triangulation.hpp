#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mocap/camera_rig.hpp"
#include "mocap/observations.hpp"

namespace mocap {

/// Per-(frame, camera, joint) weights in [0,1], laid out like ObservationSet.
struct WeightField
{
  std::size_t n_frames = 0;
  std::size_t n_cameras = 0;
  std::size_t n_joints = 0;
  std::vector<double> values;

  WeightField() = default;
  WeightField(std::size_t t, std::size_t c, std::size_t j)
    : n_frames(t), n_cameras(c), n_joints(j), values(t * c * j, 0.0)
  {
  }

  std::size_t index(std::size_t t, std::size_t c, std::size_t j) const
  {
    return (t * n_cameras + c) * n_joints + j;
  }
  double& operator()(std::size_t t, std::size_t c, std::size_t j) { return values[index(t, c, j)]; }
  double operator()(std::size_t t, std::size_t c, std::size_t j) const
  {
    return values[index(t, c, j)];
  }

  /// Confidence values of an observation set as weights.
  static WeightField from_confidence(const ObservationSet& obs);

  bool operator==(const WeightField&) const = default;
};

/// Named 3D points per frame with a validity mask.
struct PointTrajectory
{
  std::vector<std::string> joint_names;
  std::vector<double> timestamps;
  std::vector<Eigen::Vector3d> points; // frame-major, n_frames * n_joints
  std::vector<unsigned char> valid;

  PointTrajectory() = default;
  PointTrajectory(std::vector<std::string> names, std::vector<double> times);

  std::size_t n_frames() const { return timestamps.size(); }
  std::size_t n_joints() const { return joint_names.size(); }
  std::size_t index(std::size_t t, std::size_t j) const { return t * joint_names.size() + j; }

  const Eigen::Vector3d& at(std::size_t t, std::size_t j) const { return points[index(t, j)]; }
  bool is_valid(std::size_t t, std::size_t j) const { return valid[index(t, j)] != 0; }
  void set(std::size_t t, std::size_t j, const Eigen::Vector3d& p)
  {
    points[index(t, j)] = p;
    valid[index(t, j)] = 1;
  }

  /// Index of a named joint, or -1.
  int find(const std::string& name) const;

  bool operator==(const PointTrajectory&) const = default;
};

/// One back-projected observation.
struct Ray
{
  const Camera* camera = nullptr;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double weight = 0.0;
};

struct DltResult
{
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  /// Weighted mean reprojection distance over the weighted rays, px.
  double residual_px = 0.0;
  double condition = 1.0;
};

inline constexpr double kMaxDltCondition = 1e12;

/// Weighted least-squares point closest to the back-projected rays.
///
/// Detections are undistorted before the linear system is built. Throws
/// InsufficientViews with fewer than two positive weights and
/// DegenerateGeometry when the normal matrix is too ill-conditioned.
DltResult triangulate_dlt(std::span<const Ray> rays);

struct RobustWeightConfig
{
  double kernel_scale_px = 20.0;
  int iterations = 3;
};

/// Cross-camera consistency weights. Each camera is scored by its reprojection
/// residual against the triangulation of the remaining cameras, mapped through
/// 1/(1+(r/r0)^2) and multiplied by the detection confidence.
WeightField robust_weights(
    const ObservationSet& obs, const CameraRig& rig, const RobustWeightConfig& config = {});

struct RobustTriangulation
{
  PointTrajectory trajectory;
  WeightField weights;
};

/// Independent per-frame robust triangulation; no temporal coupling.
RobustTriangulation robust_triangulate_trajectory(
    const ObservationSet& obs, const CameraRig& rig, const RobustWeightConfig& config = {});

/// Triangulates each cell with the given weights.
PointTrajectory triangulate_with_weights(
    const ObservationSet& obs, const CameraRig& rig, const WeightField& weights);

/// Collapses camera weights to one weight per point (mean over cameras).
std::vector<double> point_weights(const WeightField& weights);

void save_trajectory(
    const PointTrajectory& traj,
    const std::filesystem::path& path,
    const WeightField* weights = nullptr,
    const std::vector<std::string>* camera_names = nullptr);

struct LoadedTrajectory
{
  PointTrajectory trajectory;
  std::optional<WeightField> weights;
  std::vector<std::string> camera_names;
};

LoadedTrajectory load_trajectory(const std::filesystem::path& path);

} // namespace mocap
