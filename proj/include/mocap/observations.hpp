#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mocap/camera_rig.hpp"

namespace mocap {

inline constexpr int kObservationSchemaVersion = 1;

/// 2D keypoint detections indexed by (frame, camera, joint).
///
/// Absent detections carry confidence 0 and are never read by the losses.
class ObservationSet
{
public:
  ObservationSet() = default;
  ObservationSet(
      std::vector<std::string> joint_names,
      std::vector<std::string> camera_names,
      std::vector<double> timestamps,
      std::string keypoint_set_label);

  std::size_t n_frames() const { return mTimestamps.size(); }
  std::size_t n_cameras() const { return mCameraNames.size(); }
  std::size_t n_joints() const { return mJointNames.size(); }

  const std::vector<std::string>& joint_names() const { return mJointNames; }
  const std::vector<std::string>& camera_names() const { return mCameraNames; }
  const std::vector<double>& timestamps() const { return mTimestamps; }
  const std::string& keypoint_set_label() const { return mLabel; }
  void set_keypoint_set_label(std::string label) { mLabel = std::move(label); }

  std::size_t index(std::size_t t, std::size_t c, std::size_t j) const
  {
    return (t * mCameraNames.size() + c) * mJointNames.size() + j;
  }

  bool present(std::size_t t, std::size_t c, std::size_t j) const
  {
    return mPresent[index(t, c, j)] != 0;
  }
  const Eigen::Vector2d& pixel(std::size_t t, std::size_t c, std::size_t j) const
  {
    return mPixels[index(t, c, j)];
  }
  double confidence(std::size_t t, std::size_t c, std::size_t j) const
  {
    return mConfidence[index(t, c, j)];
  }

  /// Records a detection. Confidence is clamped to [0, 1].
  void set(std::size_t t, std::size_t c, std::size_t j, const Eigen::Vector2d& px, double conf);
  void set_absent(std::size_t t, std::size_t c, std::size_t j);
  void set_confidence(std::size_t t, std::size_t c, std::size_t j, double conf);

  /// Throws ValidationError on broken invariants.
  void validate() const;

  /// Keeps only the named joints, in the given order.
  ObservationSet select_joints(const std::vector<std::string>& names, std::string label) const;

  bool operator==(const ObservationSet&) const = default;

private:
  std::vector<std::string> mJointNames;
  std::vector<std::string> mCameraNames;
  std::vector<double> mTimestamps;
  std::string mLabel;
  std::vector<Eigen::Vector2d> mPixels;
  std::vector<double> mConfidence;
  std::vector<unsigned char> mPresent;
};

/// Logistic map from test-time-augmentation scatter (mm) to confidence,
/// half maximum at 200 mm and width 50 mm.
double std_to_confidence(double sigma_mm);

inline constexpr double kDefaultMinConfidence = 0.3;

/// Zeros confidence outside [0,w)x[0,h) or below `min_confidence`.
/// Throws CameraMismatch when camera names disagree with the rig.
ObservationSet gate_observations(
    const ObservationSet& obs, const CameraRig& rig, double min_confidence = kDefaultMinConfidence);

/// Line-delimited records: a header, then one record per (frame, camera).
ObservationSet load_observations(const std::filesystem::path& path);
void save_observations(const ObservationSet& obs, const std::filesystem::path& path);

/// Throws CameraMismatch unless obs cameras equal the rig cameras in order.
void check_camera_alignment(const ObservationSet& obs, const CameraRig& rig);

} // namespace mocap
