#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mocap/camera_rig.hpp"
#include "mocap/metrics.hpp"
#include "mocap/observations.hpp"
#include "mocap/skeleton.hpp"
#include "mocap/triangulation.hpp"

namespace mocap {

struct RigSpec
{
  int cameras = 10;
  double radius = 5.0;      // m
  double height_min = 1.0;  // m
  double height_max = 2.5;  // m
  double focal = 1400.0;    // px
  Eigen::Vector2i image_size{1920, 1080};
  double k1 = 0.02;         // alternates sign between cameras
  Eigen::Vector3d target{0.0, 0.0, 0.9};
  double frame_rate = 30.0;
};

struct MotionSpec
{
  double gait_hz = 0.9;
  double stride = 1.2;      // m per gait cycle
  double duration_s = 50.0 / 30.0;
  double amplitude = 1.0;   // scales every oscillatory term
  double phase = 0.4;       // rad, left-foot gait phase at t = 0
};

struct CorruptionSpec
{
  double noise_px = 0.0;
  double outlier_probability = 0.0;
  /// Fraction of (camera, keypoint) tracks that lose one window of frames.
  double occlusion_rate = 0.0;
  int occlusion_frames = 10;
};

struct SyntheticScenario
{
  std::string name;
  RigSpec rig;
  MotionSpec motion;
  CorruptionSpec corruption;
  /// True calibration of each simulated subject.
  std::vector<ModelCalibration> subjects;
  /// True minus nominal local marker offsets, one per model marker; empty
  /// means the nominal placement is exact.
  std::vector<Eigen::Vector3d> marker_bias;
  std::vector<std::string> keypoints;        // rendered keypoints
  std::vector<std::string> selection;        // kept after rendering; empty keeps all
  std::string keypoint_set_label = "dense-87";
  std::uint64_t seed = 0;

  void validate(const SkeletonModel& model) const;
};

CameraRig make_rig(const RigSpec& spec);

/// Ground-truth pose at time t.
Eigen::VectorXd gait_pose(const SkeletonModel& model, const MotionSpec& motion, double t);

struct SyntheticMotion
{
  PoseSequence poses;
  std::vector<GaitEvent> events;  // heel strikes inside the time span
  PointTrajectory markers;        // ground-truth keypoints
};

SyntheticMotion generate_motion(
    const SkeletonModel& model,
    const MotionSpec& motion,
    const ModelCalibration& calib,
    const std::vector<std::string>& keypoints,
    double frame_rate);

/// Projects every keypoint into every camera and applies the corruption. The
/// noise, outlier and occlusion draws come from independent streams.
ObservationSet render_observations(
    const PointTrajectory& markers,
    const CameraRig& rig,
    const CorruptionSpec& corruption,
    std::uint64_t seed,
    const std::string& keypoint_set_label = "dense-87");

/// Calibration with the default true scales (femur 1.07, tibia 1/1.07).
ModelCalibration default_true_calibration(const SkeletonModel& model);

std::vector<std::string> preset_names();
/// Throws UnknownPreset.
SyntheticScenario preset_scenario(const std::string& name, std::uint64_t seed = 0);

struct FixtureSubject
{
  ModelCalibration calib;
  SyntheticMotion motion;
  ObservationSet observations;
};

struct Fixture
{
  SyntheticScenario scenario;
  SkeletonModel model;      // model used for generation (true marker placement)
  SkeletonModel nominal;    // model handed to the solver
  CameraRig rig;
  std::vector<FixtureSubject> subjects;
};

Fixture make_fixture(const SyntheticScenario& scenario);
Fixture make_fixture(const std::string& preset, std::uint64_t seed = 0);

/// Writes rig, model, and per subject the observations, true poses,
/// calibration, markers and events, plus a manifest.
void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

} // namespace mocap
