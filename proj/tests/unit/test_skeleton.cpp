#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>
#include <json.hpp>

#include "mocap/errors.hpp"
#include "mocap/skeleton.hpp"

#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace mocap;

namespace {

/// Root at the origin and one 0.4 m link hinged about z.
SkeletonModel single_hinge()
{
  std::vector<Body> bodies{{"base", "", Eigen::Vector3d::Zero(), 0.0},
                           {"link", "base", Eigen::Vector3d::Zero(), 0.4}};
  Joint root;
  root.name = "root";
  root.type = JointType::Free6;
  root.body = "base";
  root.axes = {Eigen::Vector3d::UnitZ(), Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY()};
  root.dof_names = {"tx", "ty", "tz", "rz", "rx", "ry"};
  Joint hinge;
  hinge.name = "hinge";
  hinge.type = JointType::Hinge1;
  hinge.body = "link";
  hinge.axes = {Eigen::Vector3d::UnitZ()};
  hinge.lower = {-2.0};
  hinge.upper = {2.0};
  hinge.dof_names = {"hinge_angle"};
  std::vector<Marker> markers{{"tip", "link", Eigen::Vector3d(0.4, 0.0, 0.0), MarkerKind::Tracking},
                              {"mid", "link", Eigen::Vector3d(0.2, 0.05, 0.0), MarkerKind::Anatomical}};
  return SkeletonModel(bodies, {root, hinge}, markers, {"mid"});
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle)
{
  // Rodrigues written out
  const Eigen::Vector3d k = axis.normalized();
  Eigen::Matrix3d K;
  K << 0.0, -k.z(), k.y(), k.z(), 0.0, -k.x(), -k.y(), k.x(), 0.0;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * K + (1.0 - std::cos(angle)) * K * K;
}

/// Transform composition by recursive walk over parent names.
Eigen::Matrix3Xd brute_force_fk(
    const SkeletonModel& model, const ModelCalibration& calib, const Eigen::VectorXd& q)
{
  std::map<std::string, Eigen::Isometry3d> frames;
  std::map<std::string, int> body_ids;
  for (std::size_t b = 0; b < model.bodies().size(); ++b)
    body_ids[model.bodies()[b].name] = static_cast<int>(b);

  std::function<Eigen::Isometry3d(const std::string&)> frame = [&](const std::string& name) {
    if (auto it = frames.find(name); it != frames.end())
      return it->second;
    const Body& body = model.bodies()[static_cast<std::size_t>(body_ids[name])];
    Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
    if (!body.parent.empty())
    {
      T = frame(body.parent);
      T.translate(calib.scales[body_ids[body.parent]] * body.offset);
    }
    else
      T.translate(body.offset);
    for (const auto& joint : model.joints())
    {
      if (joint.body != name)
        continue;
      std::size_t k = 0;
      if (joint.type == JointType::Free6)
        for (; k < 3; ++k)
          T.translate(q[model.dof_index(joint.dof_names[k])] * Eigen::Vector3d::Unit(static_cast<Eigen::Index>(k)));
      for (std::size_t a = 0; a < joint.axes.size(); ++a, ++k)
        T.rotate(axis_angle(joint.axes[a], q[model.dof_index(joint.dof_names[k])]));
    }
    frames[name] = T;
    return T;
  };

  Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(model.n_markers()));
  for (std::size_t m = 0; m < model.n_markers(); ++m)
  {
    const Marker& mk = model.markers()[m];
    out.col(static_cast<Eigen::Index>(m))
        = frame(mk.body) * (calib.scales[body_ids[mk.body]] * (mk.offset + calib.offsets[m]));
  }
  return out;
}

Eigen::VectorXd random_pose(const SkeletonModel& model, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd q(static_cast<Eigen::Index>(model.dof_count()));
  for (std::size_t d = 0; d < model.dof_count(); ++d)
  {
    const auto& info = model.dofs()[d];
    q[static_cast<Eigen::Index>(d)] = info.limited ? info.lower + u(rng) * (info.upper - info.lower)
                                                   : 2.0 * u(rng) - 1.0;
  }
  return q;
}

ModelCalibration random_calibration(const SkeletonModel& model, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ModelCalibration c = ModelCalibration::identity(model);
  for (Eigen::Index b = 0; b < c.scales.size(); ++b)
    c.scales[b] = 1.0 + 0.15 * u(rng);
  for (auto& o : c.offsets)
    o = 0.01 * Eigen::Vector3d(u(rng), u(rng), u(rng));
  return c;
}

} // namespace

TEST(DefaultModel, HasFortyDofs)
{
  const SkeletonModel& model = default_40_model();
  EXPECT_EQ(model.dof_count(), 40u);
  std::size_t sum = 0;
  for (const auto& j : model.joints())
    sum += static_cast<std::size_t>(rotation_count(j.type)) + (j.type == JointType::Free6 ? 3 : 0);
  EXPECT_EQ(sum, 40u);
  EXPECT_EQ(model.n_markers(), 87u);
  EXPECT_EQ(sparse_25_marker_names().size(), 25u);
  for (const auto& name : sparse_25_marker_names())
    EXPECT_GE(model.marker_index(name), 0) << name;
}

TEST(DefaultModel, LimitsAndAxesAreWellFormed)
{
  for (const auto& j : default_40_model().joints())
  {
    for (const auto& a : j.axes)
      EXPECT_NEAR(a.norm(), 1.0, 1e-12);
    for (std::size_t k = 0; k < j.lower.size(); ++k)
      EXPECT_LT(j.lower[k], j.upper[k]);
  }
}

TEST(ForwardKinematics, RestPoseComposesOffsets)
{
  const SkeletonModel& model = default_40_model();
  const ModelCalibration calib = ModelCalibration::identity(model);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(40);
  const Eigen::Matrix3Xd x = forward_kinematics(model, calib, zero);
  for (std::size_t m = 0; m < model.n_markers(); ++m)
  {
    Eigen::Vector3d expected = model.markers()[m].offset;
    for (std::string b = model.markers()[m].body; !b.empty();)
    {
      const Body& body = model.bodies()[static_cast<std::size_t>(model.body_index(b))];
      expected += body.offset;
      b = body.parent;
    }
    EXPECT_LT((x.col(static_cast<Eigen::Index>(m)) - expected).norm(), 1e-12);
  }
}

TEST(ForwardKinematics, HingeQuarterTurn)
{
  const SkeletonModel model = single_hinge();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(7);
  q[model.dof_index("hinge_angle")] = std::numbers::pi / 2.0;
  const Eigen::Matrix3Xd x = forward_kinematics(model, ModelCalibration::identity(model), q);
  EXPECT_LT((x.col(model.marker_index("tip")) - Eigen::Vector3d(0.0, 0.4, 0.0)).norm(), 1e-12);
}

TEST(ForwardKinematics, MatchesBruteForceComposition)
{
  std::mt19937_64 rng(31);
  const SkeletonModel& model = default_40_model();
  for (int i = 0; i < 10; ++i)
  {
    const ModelCalibration calib = random_calibration(model, rng);
    const Eigen::VectorXd q = random_pose(model, rng);
    EXPECT_LT((forward_kinematics(model, calib, q) - brute_force_fk(model, calib, q)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ForwardKinematics, DoublingScaleDoublesLeverArms)
{
  std::mt19937_64 rng(32);
  const SkeletonModel& model = default_40_model();
  const Eigen::VectorXd q = random_pose(model, rng);
  ModelCalibration calib = random_calibration(model, rng);
  const int femur = model.body_index("femur_r");
  ASSERT_GE(femur, 0);
  const Kinematics k1 = compute_kinematics(model, calib, q);
  const Eigen::Matrix3Xd x1 = markers_from_kinematics(model, calib, k1);
  calib.scales[femur] *= 2.0;
  const Kinematics k2 = compute_kinematics(model, calib, q);
  const Eigen::Matrix3Xd x2 = markers_from_kinematics(model, calib, k2);
  EXPECT_LT((x2 - brute_force_fk(model, calib, q)).cwiseAbs().maxCoeff(), 1e-12);
  for (std::size_t m = 0; m < model.n_markers(); ++m)
  {
    if (model.marker_body(static_cast<int>(m)) != femur)
      continue;
    const auto col = static_cast<Eigen::Index>(m);
    EXPECT_LT(((x2.col(col) - k2.body_origin[femur]) - 2.0 * (x1.col(col) - k1.body_origin[femur])).norm(), 1e-12);
  }
  for (std::size_t b = 0; b < model.n_bodies(); ++b)
  {
    if (model.parent(static_cast<int>(b)) != femur)
      continue;
    {
      const Eigen::Vector3d before = k1.body_origin[b] - k1.body_origin[femur];
      const Eigen::Vector3d after = k2.body_origin[b] - k2.body_origin[femur];
      EXPECT_LT((after - 2.0 * before).norm(), 1e-12);
    }
  }
}

TEST(ForwardKinematics, RootRigidMotionEquivariance)
{
  std::mt19937_64 rng(33);
  std::normal_distribution<double> n(0.0, 1.0);
  const SkeletonModel& model = default_40_model();
  const ModelCalibration calib = random_calibration(model, rng);
  const Eigen::VectorXd q = random_pose(model, rng);
  const Kinematics kin = compute_kinematics(model, calib, q);
  const Eigen::Matrix3Xd x = markers_from_kinematics(model, calib, kin);

  // express the markers relative to the root frame, then move the root
  const int root = model.order().front();
  const Eigen::Matrix3d R = kin.body_rotation[root];
  const Eigen::Vector3d o = kin.body_origin[root];
  const Eigen::Matrix3d G = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
  const Eigen::Vector3d g(n(rng), n(rng), n(rng));
  // new root pose whose frame is G*R at G*o+g; the root rotates z, x, y
  const auto& joint = model.joints()[model.joint_of(root)];
  ASSERT_EQ(joint.axes, (std::vector<Eigen::Vector3d>{Eigen::Vector3d::UnitZ(), Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY()}));
  const Eigen::Vector3d euler = (G * R).eulerAngles(2, 0, 1);
  const int first = model.first_dof(model.joint_of(root));
  Eigen::VectorXd q2 = q;
  q2.segment<3>(first) = G * o + g - model.bodies()[root].offset;
  q2.segment<3>(first + 3) = euler;
  const Eigen::Matrix3Xd x2 = forward_kinematics(model, calib, q2);
  for (Eigen::Index m = 0; m < x.cols(); ++m)
    EXPECT_LT((x2.col(m) - (G * x.col(m) + g)).norm(), 1e-9);
}

TEST(ForwardKinematics, SameBodyDistancesArePoseInvariant)
{
  std::mt19937_64 rng(34);
  const SkeletonModel& model = default_40_model();
  const ModelCalibration calib = random_calibration(model, rng);
  const Eigen::Matrix3Xd a = forward_kinematics(model, calib, random_pose(model, rng));
  const Eigen::Matrix3Xd b = forward_kinematics(model, calib, random_pose(model, rng));
  for (int m = 0; m < a.cols(); ++m)
    for (int k = m + 1; k < a.cols(); ++k)
    {
      if (model.marker_body(m) != model.marker_body(k))
        continue;
      EXPECT_NEAR((a.col(m) - a.col(k)).norm(), (b.col(m) - b.col(k)).norm(), 1e-12);
    }
}

TEST(ForwardKinematics, WrongShapesThrow)
{
  const SkeletonModel& model = default_40_model();
  EXPECT_THROW(forward_kinematics(model, ModelCalibration::identity(model), Eigen::VectorXd::Zero(39)), ShapeMismatch);
  ModelCalibration bad = ModelCalibration::identity(model);
  bad.offsets.pop_back();
  EXPECT_THROW(forward_kinematics(model, bad, Eigen::VectorXd::Zero(40)), ShapeMismatch);
}

TEST(FkJacobianCheck, OffsetBlockIsScaledRotation)
{
  std::mt19937_64 rng(35);
  const SkeletonModel& model = default_40_model();
  const ModelCalibration calib = random_calibration(model, rng);
  const Eigen::VectorXd q = random_pose(model, rng);
  const Kinematics kin = compute_kinematics(model, calib, q);
  const FkJacobian J = fk_jacobian(model, calib, q);
  for (std::size_t m = 0; m < model.n_markers(); ++m)
  {
    const int b = model.marker_body(static_cast<int>(m));
    EXPECT_LT((J.offset[m] - calib.scales[b] * kin.body_rotation[b]).norm(), 1e-14);
  }
}

TEST(FkJacobianCheck, HingeColumnIsAxisCrossLever)
{
  const SkeletonModel model = single_hinge();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(7);
  q << 0.1, -0.2, 0.3, 0.4, -0.1, 0.2, 0.7;
  const ModelCalibration calib = ModelCalibration::identity(model);
  const Kinematics kin = compute_kinematics(model, calib, q);
  const Eigen::Matrix3Xd x = forward_kinematics(model, calib, q);
  const FkJacobian J = fk_jacobian(model, calib, q);
  const int d = model.dof_index("hinge_angle");
  const int tip = model.marker_index("tip");
  const Eigen::Vector3d axis = kin.body_rotation[0] * Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d expected = axis.cross(x.col(tip) - kin.body_origin[1]);
  EXPECT_LT((J.pose.block<3, 1>(3 * tip, d) - expected).norm(), 1e-14);
}

TEST(JointLimits, ExcessValues)
{
  const SkeletonModel model = single_hinge();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(7);
  q[6] = 2.0;
  EXPECT_EQ(joint_limit_excess(model, q)[6], 0.0);
  q[6] = -2.0;
  EXPECT_EQ(joint_limit_excess(model, q)[6], 0.0);
  q[6] = 2.5;
  EXPECT_DOUBLE_EQ(joint_limit_excess(model, q)[6], 0.5);
  q[0] = 100.0;
  q[3] = 100.0;
  const Eigen::VectorXd e = joint_limit_excess(model, q);
  EXPECT_EQ(e[0], 0.0);
  EXPECT_EQ(e[3], 0.0);
}

TEST(JointLimits, MatchBruteForceOnRandomPoses)
{
  std::mt19937_64 rng(36);
  const SkeletonModel& model = default_40_model();
  for (int i = 0; i < 50; ++i)
  {
    const PoseSequence seq = oracle::random_pose_sequence(model, rng);
    for (const auto& q : seq.poses)
    {
      const Eigen::VectorXd e = joint_limit_excess(model, q);
      Eigen::VectorXd brute = Eigen::VectorXd::Zero(40);
      for (const auto& joint : model.joints())
        for (std::size_t k = 0; k < joint.lower.size(); ++k)
        {
          const int d = model.dof_index(joint.dof_names[joint.dof_names.size() - joint.lower.size() + k]);
          brute[d] = std::max({0.0, joint.lower[k] - q[d], q[d] - joint.upper[k]});
        }
      EXPECT_EQ(e, brute);
      EXPECT_EQ(joint_limit_excess(model, project_to_limits(model, q)).maxCoeff(), 0.0);
    }
  }
}

TEST(Refinement, MovesByMeanOffset)
{
  const SkeletonModel model = single_hinge();
  ModelCalibration a = ModelCalibration::identity(model), b = a;
  const int tip = model.marker_index("tip");
  a.offsets[tip] = Eigen::Vector3d(0.001, 0.0, 0.0);
  b.offsets[tip] = Eigen::Vector3d(0.003, 0.0, 0.0);
  const SkeletonModel refined = refine_markers(model, {a, b}, {});
  EXPECT_LT((refined.markers()[tip].offset - Eigen::Vector3d(0.402, 0.0, 0.0)).norm(), 1e-15);
  EXPECT_EQ(refined.bodies(), model.bodies());
  EXPECT_EQ(refined.joints(), model.joints());
}

TEST(Refinement, FrozenMarkersStayPut)
{
  const SkeletonModel model = single_hinge();
  ModelCalibration a = ModelCalibration::identity(model);
  const int mid = model.marker_index("mid");
  a.offsets[mid] = Eigen::Vector3d(0.01, 0.02, 0.03);
  const SkeletonModel refined = refine_markers(model, {a}, {"mid"});
  EXPECT_EQ(refined.markers()[mid].offset, model.markers()[mid].offset);
}

TEST(Refinement, ReplicatedCalibrationMatchesSingle)
{
  std::mt19937_64 rng(37);
  const SkeletonModel& model = default_40_model();
  const ModelCalibration c = random_calibration(model, rng);
  const SkeletonModel once = refine_markers(model, {c}, model.frozen_markers());
  const SkeletonModel many = refine_markers(model, {c, c, c, c}, model.frozen_markers());
  for (std::size_t m = 0; m < model.n_markers(); ++m)
    EXPECT_LT((once.markers()[m].offset - many.markers()[m].offset).norm(), 1e-15);
}

TEST(Refinement, EmptyListThrows)
{
  EXPECT_THROW(refine_markers(single_hinge(), {}, {}), EmptyCalibrationList);
}

TEST(ModelFile, DefaultRoundTrip)
{
  const auto path = scratch_dir() / "model.json";
  save_model(default_40_model(), path);
  EXPECT_EQ(load_model(path), default_40_model());
  EXPECT_EQ(resolve_model(path.string()), default_40_model());
}

TEST(ModelFile, ParentCycleIsTopologyError)
{
  const auto dir = scratch_dir();
  save_model(default_40_model(), dir / "model.json");
  nlohmann::json doc;
  std::ifstream(dir / "model.json") >> doc;
  // make the pelvis-adjacent femur the child of its own tibia
  for (auto& b : doc["bodies"])
    if (b["name"] == "femur_r")
      b["parent"] = "tibia_r";
  std::ofstream(dir / "cycle.json") << doc.dump();
  EXPECT_THROW(load_model(dir / "cycle.json"), TopologyError);

  for (auto& b : doc["bodies"])
    if (b["name"] == "femur_r")
      b["parent"] = "no_such_body";
  std::ofstream(dir / "orphan.json") << doc.dump();
  EXPECT_THROW(load_model(dir / "orphan.json"), TopologyError);
}

TEST(ModelFile, CalibrationAndPoseRoundTrip)
{
  std::mt19937_64 rng(38);
  const SkeletonModel& model = default_40_model();
  const ModelCalibration calib = random_calibration(model, rng);
  const auto dir = scratch_dir();
  save_calibration(model, calib, dir / "calib.json");
  EXPECT_EQ(load_calibration(model, dir / "calib.json"), calib);

  PoseSequence seq = oracle::random_pose_sequence(model, rng);
  save_pose_csv(seq, dir / "poses.csv");
  const PoseSequence loaded = load_pose_csv(dir / "poses.csv");
  EXPECT_EQ(loaded, seq);
}

TEST(RigidPairs, LinkOnlySameBodyMarkers)
{
  const SkeletonModel& model = default_40_model();
  const auto names = model.marker_names();
  const auto pairs = rigid_marker_pairs(model, names);
  EXPECT_FALSE(pairs.empty());
  for (const auto& [a, b] : pairs)
    EXPECT_EQ(model.marker_body(model.marker_index(names[a])), model.marker_body(model.marker_index(names[b])));
}
