#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mocap {

enum class JointType
{
  Free6,      // translations along parent x,y,z, then three rotations
  Ball3,      // three sequential rotations about the listed axes
  Hinge1,
  Universal2, // two sequential rotations
};

enum class MarkerKind
{
  Anatomical,
  Tracking,
};

std::string to_string(JointType type);
std::string to_string(MarkerKind kind);
int rotation_count(JointType type);

struct Body
{
  std::string name;
  std::string parent; // empty for the root
  /// Joint origin in the parent body frame, scaled by the parent's scale.
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  double default_length = 0.0;

  bool operator==(const Body&) const = default;
};

struct Joint
{
  std::string name;
  JointType type = JointType::Hinge1;
  std::string body; // the child body this joint moves
  std::vector<Eigen::Vector3d> axes; // rotation axes, in application order
  std::vector<double> lower;         // per rotational DOF; empty for Free6
  std::vector<double> upper;
  std::vector<std::string> dof_names;

  bool operator==(const Joint&) const = default;
};

struct Marker
{
  std::string name;
  std::string body;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  MarkerKind kind = MarkerKind::Tracking;

  bool operator==(const Marker&) const = default;
};

struct DofInfo
{
  std::string name;
  int joint = -1;
  int body = -1;
  bool translation = false;
  bool limited = false;
  double lower = 0.0;
  double upper = 0.0;
  /// Position of the DOF within its joint's rotation sequence (or axis index
  /// for translations).
  int slot = 0;
};

/// Tree-structured kinematic model rooted at a free joint.
///
/// Construction validates topology and builds the index tables used by
/// forward kinematics; every derived table is recomputed from the plain
/// body/joint/marker lists so the lists stay the single source of truth.
class SkeletonModel
{
public:
  SkeletonModel() = default;
  SkeletonModel(
      std::vector<Body> bodies,
      std::vector<Joint> joints,
      std::vector<Marker> markers,
      std::vector<std::string> frozen_markers = {});

  const std::vector<Body>& bodies() const { return mBodies; }
  const std::vector<Joint>& joints() const { return mJoints; }
  const std::vector<Marker>& markers() const { return mMarkers; }
  const std::vector<std::string>& frozen_markers() const { return mFrozen; }
  const std::vector<DofInfo>& dofs() const { return mDofs; }

  std::size_t n_bodies() const { return mBodies.size(); }
  std::size_t n_markers() const { return mMarkers.size(); }
  std::size_t dof_count() const { return mDofs.size(); }

  int body_index(const std::string& name) const;
  int marker_index(const std::string& name) const;
  int dof_index(const std::string& name) const;
  std::vector<std::string> marker_names() const;
  std::vector<std::string> dof_names() const;

  /// Parent body index, -1 for the root.
  int parent(int body) const { return mParent[body]; }
  /// Joint that moves `body`.
  int joint_of(int body) const { return mJointOfBody[body]; }
  int marker_body(int marker) const { return mMarkerBody[marker]; }
  int first_dof(int joint) const { return mFirstDof[joint]; }
  /// Bodies ordered so every parent precedes its children.
  const std::vector<int>& order() const { return mOrder; }
  /// Ancestor chain of a body, root first, including the body itself.
  const std::vector<int>& chain(int body) const { return mChain[body]; }
  bool is_frozen(int marker) const { return mFrozenFlag[marker] != 0; }

  /// Copy with marker offsets replaced.
  SkeletonModel with_marker_offsets(const std::vector<Eigen::Vector3d>& offsets) const;
  /// Copy keeping only the named markers (in model order).
  SkeletonModel with_markers(const std::vector<std::string>& names) const;

  bool operator==(const SkeletonModel& o) const
  {
    return mBodies == o.mBodies && mJoints == o.mJoints && mMarkers == o.mMarkers
           && mFrozen == o.mFrozen;
  }

private:
  void build();

  std::vector<Body> mBodies;
  std::vector<Joint> mJoints;
  std::vector<Marker> mMarkers;
  std::vector<std::string> mFrozen;

  std::vector<DofInfo> mDofs;
  std::vector<int> mParent;
  std::vector<int> mJointOfBody;
  std::vector<int> mMarkerBody;
  std::vector<int> mFirstDof;
  std::vector<int> mOrder;
  std::vector<std::vector<int>> mChain;
  std::vector<unsigned char> mFrozenFlag;
  std::map<std::string, int> mBodyIndex;
  std::map<std::string, int> mMarkerIndex;
};

/// Per-subject scales and marker offset adjustments.
struct ModelCalibration
{
  Eigen::VectorXd scales;               // one isotropic factor per body
  std::vector<Eigen::Vector3d> offsets; // one adjustment per marker, meters

  static ModelCalibration identity(const SkeletonModel& model);
  void validate(const SkeletonModel& model, double max_anatomical_offset = 0.25) const;

  bool operator==(const ModelCalibration&) const = default;
};

struct PoseSequence
{
  std::vector<std::string> dof_names;
  std::vector<double> timestamps;
  std::vector<Eigen::VectorXd> poses;

  std::size_t size() const { return poses.size(); }
  void validate() const;

  bool operator==(const PoseSequence&) const = default;
};

/// World frames of every body plus the quantities the Jacobian needs.
struct Kinematics
{
  std::vector<Eigen::Matrix3d> body_rotation;
  std::vector<Eigen::Vector3d> body_origin;
  /// Per DOF: world axis (rotation axis or translation direction) and the
  /// world point the rotation passes through.
  std::vector<Eigen::Vector3d> dof_axis;
  std::vector<Eigen::Vector3d> dof_origin;
};

Kinematics compute_kinematics(
    const SkeletonModel& model, const ModelCalibration& calib, const Eigen::VectorXd& pose);

/// Marker world positions, one column per marker. Throws ShapeMismatch.
Eigen::Matrix3Xd forward_kinematics(
    const SkeletonModel& model, const ModelCalibration& calib, const Eigen::VectorXd& pose);

Eigen::Matrix3Xd markers_from_kinematics(
    const SkeletonModel& model, const ModelCalibration& calib, const Kinematics& kin);

/// Derivatives of stacked marker positions (3M rows, marker-major).
struct FkJacobian
{
  Eigen::MatrixXd pose;  // 3M x D
  Eigen::MatrixXd scale; // 3M x n_bodies
  /// d x_m / d O_m; markers do not depend on each other's offsets.
  std::vector<Eigen::Matrix3d> offset;

  /// Full 3M x (D + n_bodies + 3M) matrix.
  Eigen::MatrixXd dense() const;
};

FkJacobian fk_jacobian(
    const SkeletonModel& model, const ModelCalibration& calib, const Eigen::VectorXd& pose);

/// Same as fk_jacobian with kinematics already evaluated; also fills markers.
FkJacobian fk_jacobian(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const Kinematics& kin,
    Eigen::Matrix3Xd* markers);

/// max(0, lo - q, q - hi) per limited DOF, 0 elsewhere.
Eigen::VectorXd joint_limit_excess(const SkeletonModel& model, const Eigen::VectorXd& pose);

/// Clamps limited DOFs into [lo, hi].
Eigen::VectorXd project_to_limits(const SkeletonModel& model, const Eigen::VectorXd& pose);

/// Moves each non-frozen marker's local offset by the mean calibration offset
/// across subjects. Throws EmptyCalibrationList.
SkeletonModel refine_markers(
    const SkeletonModel& model,
    const std::vector<ModelCalibration>& calibrations,
    const std::vector<std::string>& frozen);

/// Pairs of markers sharing a rigid body, each marker linked to up to
/// `per_marker` partners. Names not in the model are skipped.
std::vector<std::pair<int, int>> rigid_marker_pairs(
    const SkeletonModel& model, const std::vector<std::string>& names, int per_marker = 2);

SkeletonModel load_model(const std::filesystem::path& path);
void save_model(const SkeletonModel& model, const std::filesystem::path& path);

/// Built-in 21-body, 40-DOF full-body model with 87 markers.
const SkeletonModel& default_40_model();
/// The 25-keypoint subset with no markers between hips and shoulders.
const std::vector<std::string>& sparse_25_marker_names();
/// Model by name: "default-40" or a path to a model file.
SkeletonModel resolve_model(const std::string& name_or_path);

void save_pose_csv(const PoseSequence& poses, const std::filesystem::path& path);
PoseSequence load_pose_csv(const std::filesystem::path& path);

void save_calibration(
    const SkeletonModel& model, const ModelCalibration& calib, const std::filesystem::path& path);
ModelCalibration load_calibration(const SkeletonModel& model, const std::filesystem::path& path);

} // namespace mocap
