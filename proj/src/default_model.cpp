// Built-in full-body model: 21 bodies, 40 DOF, 87 markers.
//
// Frames at zero pose are aligned with the world: x forward, y left, z up.
// Geometry is an adult of roughly 1.75 m with the pelvis origin 0.95 m above
// the floor when the root translation is (0, 0, 0.95).

#include <cmath>

#include "mocap/skeleton.hpp"

namespace mocap {

namespace {

using V = Eigen::Vector3d;

const V kX(1, 0, 0);
const V kY(0, 1, 0);
const V kZ(0, 0, 1);

struct Side
{
  const char* tag; // "l" or "r"
  double sign;     // +1 left, -1 right
};

SkeletonModel build_default_40()
{
  std::vector<Body> bodies;
  std::vector<Joint> joints;
  std::vector<Marker> markers;
  std::vector<std::string> frozen;

  auto body = [&](const std::string& name, const std::string& parent, V offset, double length) {
    bodies.push_back({name, parent, offset, length});
  };
  auto joint = [&](const std::string& name,
                   JointType type,
                   const std::string& child,
                   std::vector<V> axes,
                   std::vector<std::pair<double, double>> limits,
                   std::vector<std::string> dofs) {
    Joint j;
    j.name = name;
    j.type = type;
    j.body = child;
    j.axes = std::move(axes);
    for (const auto& [lo, hi] : limits)
    {
      j.lower.push_back(lo);
      j.upper.push_back(hi);
    }
    j.dof_names = std::move(dofs);
    joints.push_back(std::move(j));
  };
  auto marker = [&](const std::string& name, const std::string& on, V offset, MarkerKind kind,
                    bool freeze = false) {
    markers.push_back({name, on, offset, kind});
    if (freeze)
      frozen.push_back(name);
  };
  constexpr auto A = MarkerKind::Anatomical;
  constexpr auto T = MarkerKind::Tracking;

  // Axial skeleton.
  body("pelvis", "", V::Zero(), 0.20);
  joint("ground_pelvis", JointType::Free6, "pelvis", {kZ, kX, kY}, {},
        {"pelvis_tx", "pelvis_ty", "pelvis_tz", "pelvis_rotation", "pelvis_list",
         "pelvis_tilt"});
  body("torso", "pelvis", V(-0.07, 0, 0.08), 0.46);
  joint("back", JointType::Ball3, "torso", {-kY, kX, kZ},
        {{-0.52, 0.52}, {-0.35, 0.35}, {-0.35, 0.35}},
        {"lumbar_extension", "lumbar_bending", "lumbar_rotation"});
  body("head", "torso", V(0.02, 0, 0.46), 0.24);
  joint("neck", JointType::Ball3, "head", {-kY, kX, kZ},
        {{-0.6, 0.6}, {-0.5, 0.5}, {-0.8, 0.8}},
        {"neck_flexion", "neck_bending", "neck_rotation"});

  marker("lasi", "pelvis", V(0.06, 0.12, 0.02), A);
  marker("rasi", "pelvis", V(0.06, -0.12, 0.02), A);
  marker("lpsi", "pelvis", V(-0.14, 0.05, 0.04), A);
  marker("rpsi", "pelvis", V(-0.14, -0.05, 0.04), A);
  marker("sacr", "pelvis", V(-0.16, 0, 0.0), A);
  marker("lwaist", "pelvis", V(-0.02, 0.15, 0.03), T);
  marker("rwaist", "pelvis", V(-0.02, -0.15, 0.03), T);
  marker("lhip", "pelvis", V(-0.02, 0.085, -0.07), A);
  marker("rhip", "pelvis", V(-0.02, -0.085, -0.07), A);

  marker("c7", "torso", V(-0.05, 0, 0.47), A);
  marker("t10", "torso", V(-0.12, 0, 0.20), A);
  marker("clav", "torso", V(0.09, 0, 0.42), A);
  marker("strn", "torso", V(0.13, 0, 0.28), A);
  marker("umbilicus", "torso", V(0.17, 0, 0.02), T);
  marker("lbreast", "torso", V(0.13, 0.09, 0.30), T);
  marker("rbreast", "torso", V(0.13, -0.09, 0.30), T);
  marker("lbak", "torso", V(-0.12, 0.10, 0.32), T);
  marker("rbak", "torso", V(-0.12, -0.10, 0.32), T);
  marker("lsho", "torso", V(-0.01, 0.19, 0.44), A);
  marker("rsho", "torso", V(-0.01, -0.19, 0.44), A);
  marker("neck", "torso", V(0.0, 0, 0.43), A);
  marker("lshoulder", "torso", V(0.0, 0.17, 0.40), A);
  marker("rshoulder", "torso", V(0.0, -0.17, 0.40), A);

  marker("head", "head", V(0.0, 0, 0.22), A);
  marker("nose", "head", V(0.11, 0, 0.10), A);
  marker("leye", "head", V(0.085, 0.035, 0.13), A);
  marker("reye", "head", V(0.085, -0.035, 0.13), A);
  marker("lear", "head", V(0.0, 0.075, 0.11), A);
  marker("rear", "head", V(0.0, -0.075, 0.11), A);
  marker("lfhd", "head", V(0.08, 0.06, 0.18), A);
  marker("rfhd", "head", V(0.08, -0.06, 0.18), A);
  marker("lbhd", "head", V(-0.08, 0.06, 0.16), A);
  marker("rbhd", "head", V(-0.08, -0.06, 0.16), A);

  for (const Side s : {Side{"l", 1.0}, Side{"r", -1.0}})
  {
    const std::string t = s.tag;
    const double y = s.sign;
    // Leg.
    body("femur_" + t, "pelvis", V(-0.02, y * 0.085, -0.07), 0.42);
    joint("hip_" + t, JointType::Ball3, "femur_" + t, {-kY, -y * kX, -y * kZ},
          {{-0.52, 2.09}, {-0.87, 0.52}, {-0.70, 0.70}},
          {"hip_flexion_" + t, "hip_adduction_" + t, "hip_rotation_" + t});
    body("tibia_" + t, "femur_" + t, V(0, 0, -0.42), 0.40);
    joint("knee_" + t, JointType::Hinge1, "tibia_" + t, {kY}, {{0.0, 2.09}},
          {"knee_angle_" + t});
    body("talus_" + t, "tibia_" + t, V(0, 0, -0.40), 0.05);
    joint("ankle_" + t, JointType::Hinge1, "talus_" + t, {-kY}, {{-0.70, 0.52}},
          {"ankle_angle_" + t});
    body("calcn_" + t, "talus_" + t, V(-0.03, 0, -0.04), 0.17);
    joint("subtalar_" + t, JointType::Hinge1, "calcn_" + t, {y * kX}, {{-0.35, 0.35}},
          {"subtalar_angle_" + t});
    body("toes_" + t, "calcn_" + t, V(0.17, 0, -0.01), 0.06);
    joint("mtp_" + t, JointType::Hinge1, "toes_" + t, {-kY}, {{-0.52, 0.52}},
          {"mtp_angle_" + t});

    marker(t + "thigh", "femur_" + t, V(0.0, y * 0.08, -0.22), T);
    marker(t + "frontthigh", "femur_" + t, V(0.07, y * 0.02, -0.18), T);
    marker(t + "kne", "femur_" + t, V(0.0, y * 0.05, -0.42), A, true);
    marker(t + "knem", "femur_" + t, V(0.0, -y * 0.05, -0.42), A, true);
    marker(t + "knee", "femur_" + t, V(0, 0, -0.42), A, true);
    marker(t + "tib", "tibia_" + t, V(0.0, y * 0.05, -0.20), T);
    marker(t + "shin", "tibia_" + t, V(0.05, 0, -0.16), T);
    marker(t + "ank", "tibia_" + t, V(0.0, y * 0.04, -0.40), A, true);
    marker(t + "ankm", "tibia_" + t, V(0.0, -y * 0.035, -0.40), A, true);
    marker(t + "ankle", "tibia_" + t, V(0, 0, -0.40), A, true);
    marker(t + "hee", "calcn_" + t, V(-0.04, 0, 0.02), A, true);
    marker(t + "heel", "calcn_" + t, V(-0.03, 0, 0.0), A, true);
    marker(t + "mt5", "calcn_" + t, V(0.13, y * 0.04, 0.0), A, true);
    marker(t + "mt1", "calcn_" + t, V(0.13, -y * 0.03, 0.0), A, true);
    marker(t + "toe", "toes_" + t, V(0.05, 0, 0.01), A, true);
    marker(t + "bigtoe", "toes_" + t, V(0.06, -y * 0.02, 0.0), A, true);
    marker(t + "smalltoe", "toes_" + t, V(0.04, y * 0.035, 0.0), A, true);

    // Arm.
    body("humerus_" + t, "torso", V(0.0, y * 0.17, 0.40), 0.29);
    joint("shoulder_" + t, JointType::Ball3, "humerus_" + t, {-kY, -y * kX, -y * kZ},
          {{-1.05, 2.62}, {-1.57, 0.35}, {-1.2, 1.2}},
          {"arm_flex_" + t, "arm_add_" + t, "arm_rot_" + t});
    body("ulna_" + t, "humerus_" + t, V(0, 0, -0.29), 0.24);
    joint("elbow_" + t, JointType::Hinge1, "ulna_" + t, {-kY}, {{0.0, 2.62}},
          {"elbow_flex_" + t});
    body("radius_" + t, "ulna_" + t, V(0, 0, 0), 0.24);
    joint("radioulnar_" + t, JointType::Hinge1, "radius_" + t, {y * kZ}, {{-1.2, 1.2}},
          {"pro_sup_" + t});
    body("hand_" + t, "radius_" + t, V(0, 0, -0.24), 0.08);
    joint("wrist_" + t, JointType::Universal2, "hand_" + t, {-kY, y * kX},
          {{-1.0, 1.0}, {-0.35, 0.44}}, {"wrist_flex_" + t, "wrist_dev_" + t});

    marker(t + "upa", "humerus_" + t, V(0.0, y * 0.045, -0.15), T);
    marker(t + "elb", "humerus_" + t, V(0.0, y * 0.035, -0.29), A, true);
    marker(t + "elbm", "humerus_" + t, V(0.0, -y * 0.035, -0.29), A, true);
    marker(t + "elbow", "humerus_" + t, V(0, 0, -0.29), A, true);
    marker(t + "fra", "ulna_" + t, V(-0.03, 0, -0.12), T);
    marker(t + "wra", "radius_" + t, V(0.025, 0, -0.24), A, true);
    marker(t + "wrb", "radius_" + t, V(-0.025, 0, -0.24), A, true);
    marker(t + "wrist", "radius_" + t, V(0, 0, -0.24), A, true);
    marker(t + "fin", "hand_" + t, V(0.0, 0, -0.08), T);
    marker(t + "thumb", "hand_" + t, V(0.04, 0, -0.05), T);
  }
  return SkeletonModel(bodies, joints, markers, frozen);
}

} // namespace

const SkeletonModel& default_40_model()
{
  static const SkeletonModel model = build_default_40();
  return model;
}

const std::vector<std::string>& sparse_25_marker_names()
{
  static const std::vector<std::string> names = {
      "nose",      "leye",      "reye",     "lear",      "rear",
      "head",      "neck",      "lshoulder", "rshoulder", "lelbow",
      "relbow",    "lwrist",    "rwrist",   "lhip",      "rhip",
      "lknee",     "rknee",     "lankle",   "rankle",    "lbigtoe",
      "rbigtoe",   "lsmalltoe", "rsmalltoe", "lheel",    "rheel",
  };
  return names;
}

} // namespace mocap
