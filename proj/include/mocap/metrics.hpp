#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mocap/camera_rig.hpp"
#include "mocap/observations.hpp"
#include "mocap/skeleton.hpp"
#include "mocap/triangulation.hpp"

namespace mocap {

/// q(d, lambda): among detections with weight > lambda, the fraction whose
/// predicted marker reprojects within d pixels. Empty denominator -> nullopt.
std::optional<double> geometric_consistency(
    const PointTrajectory& predicted,
    const ObservationSet& obs,
    const CameraRig& rig,
    const WeightField& weights,
    double d_px,
    double lambda = 0.5);

/// Mean distance (mm) over points valid in both trajectories, matched by name.
std::optional<double> residual_marker_error(
    const PointTrajectory& predicted, const PointTrajectory& targets);

struct ViolationFractions
{
  double v0 = 0.0;
  double v50 = 0.0;
  double v100 = 0.0;
};

/// Fractions of (frame, limited DOF) samples whose excess is > 0, > 0.5 range
/// and > range.
ViolationFractions violation_fractions(const SkeletonModel& model, const PoseSequence& poses);

/// Mean squared frame-to-frame change over all DOFs.
double pose_noise(const PoseSequence& poses);

/// Linear-interpolation quantile between order statistics, q in [0, 1].
double quantile(std::vector<double> samples, double q);

/// 0.7413 * IQR.
double sigma_iqr(const std::vector<double>& samples);

enum class Foot
{
  Left,
  Right,
};

struct GaitEvent
{
  double time_s = 0.0;
  Foot foot = Foot::Left;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();

  bool operator==(const GaitEvent&) const = default;
};

/// Spatial parameters attached to each contact, measured against the
/// preceding opposite-foot contact (step) or same-foot contact (stride).
struct GaitRow
{
  GaitEvent event;
  std::optional<double> step_length;
  std::optional<double> step_width;
  std::optional<double> stride_length;
};

struct GaitParameters
{
  Eigen::Vector2d direction = Eigen::Vector2d::UnitX(); // horizontal walking axis
  std::vector<GaitRow> rows;                            // time-ordered

  std::vector<double> step_lengths() const;
  std::vector<double> step_widths() const;
  std::vector<double> stride_lengths() const;
};

/// Walking direction is the principal horizontal axis of the heel positions,
/// each foot centered separately. Throws TooFewEvents with < 3 contacts.
GaitParameters gait_parameters(const std::vector<GaitEvent>& left, const std::vector<GaitEvent>& right);
GaitParameters gait_parameters(const std::vector<GaitEvent>& events);

struct GaitErrorStats
{
  std::optional<double> step_length_mm;
  std::optional<double> stride_length_mm;
  std::optional<double> step_width_mm;
  std::size_t matched = 0;
};

inline constexpr double kDefaultMatchToleranceS = 0.25;

/// Matches each reference contact to the nearest same-foot estimate within the
/// tolerance and returns sigma_iqr of the parameter differences.
GaitErrorStats gait_error_stats(
    const std::vector<GaitEvent>& estimated,
    const std::vector<GaitEvent>& reference,
    double match_tolerance_s = kDefaultMatchToleranceS);

/// Heel strikes as local minima of heel height with speed below a threshold.
std::vector<GaitEvent> detect_heel_strikes(
    const std::vector<double>& times,
    const std::vector<Eigen::Vector3d>& heel,
    Foot foot,
    double max_speed = 0.5);

/// Heel (calcaneus origin) positions per frame for one foot.
std::vector<Eigen::Vector3d> heel_positions(
    const SkeletonModel& model, const ModelCalibration& calib, const PoseSequence& poses, Foot foot);

/// Heel positions interpolated at the given times.
std::vector<GaitEvent> sample_events(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const PoseSequence& poses,
    const std::vector<GaitEvent>& at);

struct MetricsReport
{
  std::optional<double> marker_err_mm;
  double pose_noise = 0.0;
  std::map<double, std::optional<double>> gc; // threshold px -> value
  double gc_lambda = 0.5;
  ViolationFractions violations;
  std::optional<GaitErrorStats> gait;
};

void save_metrics(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_metrics(const std::filesystem::path& path);

void save_events(const std::vector<GaitEvent>& events, const std::filesystem::path& path);
std::vector<GaitEvent> load_events(const std::filesystem::path& path);

} // namespace mocap
