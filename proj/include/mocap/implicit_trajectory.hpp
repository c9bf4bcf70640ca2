#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mocap/camera_rig.hpp"
#include "mocap/implicit_network.hpp"
#include "mocap/observations.hpp"
#include "mocap/triangulation.hpp"

namespace mocap {

inline constexpr int kDefaultPeFrequencies = 16;

struct Encoding
{
  Eigen::VectorXd values; // [sin(2^k s), cos(2^k s)] for k = 0..K-1
  bool extrapolated = false;
};

/// Sinusoidal encoding of time with s = pi (t - t0) / (t1 - t0).
Encoding positional_encoding(double t, double t0, double t1, int frequencies);

/// Encodings of several times, one column each.
Eigen::MatrixXd encode_times(const std::vector<double>& times, double t0, double t1, int frequencies);

/// Time -> R^{J x 3} trajectory backed by the fixed-width network.
struct ImplicitTrajectory
{
  std::vector<std::string> joint_names;
  double t0 = 0.0;
  double t1 = 1.0;
  int pe_frequencies = kDefaultPeFrequencies;
  ImplicitNetwork<float> network;

  ImplicitTrajectory() = default;
  ImplicitTrajectory(
      std::vector<std::string> joints, double start, double end, int frequencies = kDefaultPeFrequencies);

  std::size_t n_joints() const { return joint_names.size(); }

  /// Joint positions at time t, one column per joint.
  Eigen::Matrix3Xd forward(double t) const;
  /// Outputs for several times; column k holds the stacked 3J vector of times[k].
  Eigen::MatrixXd forward_batch(const std::vector<double>& times) const;
  /// Samples into a trajectory (every point valid).
  PointTrajectory sample(const std::vector<double>& times) const;
};

struct HuberParams
{
  double knee1 = 5.0;  // px, end of the quadratic zone
  double knee2 = 10.0; // px, start of the reduced-slope tail
  double tail_slope = 0.2; // tail slope as a fraction of knee1
};

double huber_g(double residual, const HuberParams& p = {});
double huber_g_derivative(double residual, const HuberParams& p = {});

/// Value and gradient of a loss term with respect to stacked network outputs.
struct LossTerm
{
  double value = 0.0;
  Eigen::MatrixXd gradient; // same shape as the outputs
};

/// Penalty charged for a point behind a camera.
inline constexpr double kBehindCameraPenalty = 1e4;

/// Precomputed positive-weight reprojection targets.
class ReprojectionTargets
{
public:
  struct Entry
  {
    int camera;
    int joint;
    Eigen::Vector2d pixel;
    double weight;
  };

  ReprojectionTargets(const ObservationSet& obs, const CameraRig& rig, const WeightField& weights);

  const std::vector<Entry>& frame(std::size_t t) const { return mFrames[t]; }
  std::size_t n_frames() const { return mFrames.size(); }
  std::size_t n_cameras() const { return mCameras; }
  std::size_t n_joints() const { return mJoints; }
  const CameraRig& rig() const { return *mRig; }

private:
  const CameraRig* mRig;
  std::size_t mCameras;
  std::size_t mJoints;
  std::vector<std::vector<Entry>> mFrames;
};

/// Weighted Huber reprojection loss over `frames`, normalized by
/// frames.size() * J * C. `outputs` column k belongs to frames[k].
LossTerm reprojection_term(
    const Eigen::MatrixXd& outputs,
    const std::vector<std::size_t>& frames,
    const ReprojectionTargets& targets,
    const HuberParams& huber = {});

/// Mean squared second difference over consecutive output columns (m^2).
LossTerm smooth_term(const Eigen::MatrixXd& outputs);

/// Mean over edges of the population variance of the edge length (m^2).
LossTerm skeleton_term(const Eigen::MatrixXd& outputs, const std::vector<std::pair<int, int>>& edges);

double loss_reprojection(
    const ImplicitTrajectory& model,
    const ObservationSet& obs,
    const CameraRig& rig,
    const WeightField& weights,
    const std::vector<std::size_t>& frames,
    const HuberParams& huber = {});

double loss_smooth(const ImplicitTrajectory& model, const std::vector<double>& grid);

double loss_skeleton(
    const ImplicitTrajectory& model,
    const std::vector<std::pair<int, int>>& edges,
    const std::vector<double>& grid);

struct FitConfig
{
  double lambda_smooth = 10.0;
  double lambda_skeleton = 1.0;
  HuberParams huber;
  double peak_learning_rate = 1e-3;
  int warmup_iterations = 100;
  int iterations = 2000;
  int batch_size = 32;
  int eval_every = 100;
  std::uint64_t seed = 0;
  int pe_frequencies = kDefaultPeFrequencies;
  /// Output-layer weight scale at initialization.
  double output_init_scale = 0.1;
  std::vector<std::pair<int, int>> bone_edges;

  void validate() const;
};

struct FitReport
{
  std::vector<std::pair<int, double>> loss_curve; // (iteration, full-batch loss)
  int best_iteration = -1;
  double best_loss = 0.0;
  double final_reprojection = 0.0;
  double final_smooth = 0.0;
  double final_skeleton = 0.0;
};

struct FitResult
{
  ImplicitTrajectory model;
  FitReport report;
};

/// Terms of the full objective evaluated on every frame.
struct LossBreakdown
{
  double reprojection = 0.0;
  double smooth = 0.0;
  double skeleton = 0.0;
  double total = 0.0;
};

LossBreakdown full_loss(
    const ImplicitTrajectory& model,
    const ObservationSet& obs,
    const ReprojectionTargets& targets,
    const FitConfig& config);

/// Fits the network with Adam (linear warmup, cosine decay) on random windows
/// of consecutive frames. Returns the parameters with the lowest full-batch
/// loss seen at the evaluation points. Throws DivergenceDetected.
FitResult fit_trajectory(
    const ObservationSet& obs,
    const CameraRig& rig,
    const WeightField& weights,
    const FitConfig& config);

/// Writes the architecture and report as a document next to a raw
/// little-endian float32 parameter file (`<stem>.params.bin`).
void save_implicit(
    const ImplicitTrajectory& model, const FitReport* report, const std::filesystem::path& path);
ImplicitTrajectory load_implicit(const std::filesystem::path& path);

} // namespace mocap
