#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mocap/skeleton.hpp"
#include "mocap/triangulation.hpp"

namespace mocap {

enum class MarkerKernel
{
  Squared,
  Huber,
};

enum class JointLimitMode
{
  Soft,
  Hard,
};

struct IKConfig
{
  MarkerKernel kernel = MarkerKernel::Squared;
  double huber_delta = 0.02; // m
  double alpha_joint = 5.0;
  JointLimitMode joint_limit_mode = JointLimitMode::Soft;
  double alpha_anthro = 1.0;
  double alpha_offset_anat = 10.0;  // m^-2
  double alpha_offset_track = 1.0;  // m^-2
  int outer_rounds = 8;
  int init_iterations = 30;  // pose iterations for the first pass
  int pose_iterations = 10;  // pose iterations per frame per round
  int calib_iterations = 3;  // (S, O) steps per round
  double tolerance = 1e-10;  // relative objective decrease
  bool solve_calibration = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One trial: target points and per-point weights (frames x joints). An empty
/// weight matrix means unit weights.
struct IKTrial
{
  PointTrajectory targets;
  Eigen::MatrixXd weights;
};

struct IKObjective
{
  double marker = 0.0;
  double joint = 0.0;
  double anthro = 0.0;
  double offset = 0.0;
  double total = 0.0;
};

struct IKDiagnostics
{
  IKObjective objective;
  std::vector<double> round_objective; // after initialization and each round
  int rounds_run = 0;
  bool converged = false;
  bool degenerate = false;
  double calibration_rcond = 0.0;
  /// Per trial, per frame mean marker distance (m) over valid targets.
  std::vector<std::vector<double>> frame_residual;
  std::vector<std::string> warnings;
};

struct IKSolution
{
  ModelCalibration calib;
  std::vector<PoseSequence> poses;
  IKDiagnostics diagnostics;
};

/// Threshold on the reciprocal condition of the calibration normal matrix.
inline constexpr double kDegenerateRcond = 1e-12;

double ik_kernel(double distance, const IKConfig& config);

/// Variance of log scales over bodies.
double log_scale_variance(const Eigen::VectorXd& scales);

IKObjective ik_objective(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const std::vector<PoseSequence>& poses,
    const std::vector<IKTrial>& trials,
    const IKConfig& config);

/// Gradient of the total objective with respect to every pose, scale and
/// marker offset.
struct IKGradient
{
  std::vector<std::vector<Eigen::VectorXd>> poses; // per trial, per frame
  Eigen::VectorXd scales;
  std::vector<Eigen::Vector3d> offsets;
};

IKGradient ik_objective_gradient(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const std::vector<PoseSequence>& poses,
    const std::vector<IKTrial>& trials,
    const IKConfig& config);

/// Joint estimation of scales, marker offsets and per-trial poses. Throws
/// InsufficientMarkers when a trial has no frame with 4 valid markers and
/// ShapeMismatch when a target name is not a model marker.
IKSolution solve_ik(
    const SkeletonModel& model, const std::vector<IKTrial>& trials, const IKConfig& config);

/// FK of a pose sequence restricted to the named markers.
PointTrajectory predicted_markers(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const PoseSequence& poses,
    const std::vector<std::string>& names);

/// Writes calibration, one pose file per trial and a diagnostics document
/// into `dir`.
void save_ik_solution(
    const SkeletonModel& model, const IKSolution& solution, const std::filesystem::path& dir);

} // namespace mocap
