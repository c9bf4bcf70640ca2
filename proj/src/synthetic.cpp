#include "mocap/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

using json_util::json;

namespace {

constexpr double kPi = std::numbers::pi;

enum Stream : std::uint64_t
{
  kNoiseStream = 1,
  kOutlierStream = 2,
  kOcclusionStream = 3,
  kBiasStream = 4,
};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

std::size_t frame_count(const MotionSpec& m, double frame_rate)
{
  return static_cast<std::size_t>(std::llround(m.duration_s * frame_rate));
}

} // namespace

void SyntheticScenario::validate(const SkeletonModel& model) const
{
  const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(corruption.outlier_probability) || !in_unit(corruption.occlusion_rate))
    throw ConfigError("corruption probabilities must lie in [0, 1]");
  if (!(corruption.noise_px >= 0.0) || corruption.occlusion_frames < 0)
    throw ConfigError("noise and occlusion length must be non-negative");
  if (!(rig.frame_rate > 0.0) || frame_count(motion, rig.frame_rate) < 2)
    throw ConfigError("scenario must span at least 2 frames");
  if (rig.cameras < 2 || !(rig.radius > 0.0) || !(rig.focal > 0.0))
    throw ConfigError("rig needs at least 2 cameras, a positive radius and focal length");
  if (subjects.empty())
    throw ConfigError("scenario has no subjects");
  for (const auto& s : subjects)
    s.validate(model, std::numeric_limits<double>::infinity());
  if (!marker_bias.empty() && marker_bias.size() != model.n_markers())
    throw ConfigError("marker bias must have one entry per model marker");
  for (const auto& k : keypoints)
    if (model.marker_index(k) < 0)
      throw ConfigError("keypoint '" + k + "' is not a model marker");
}

CameraRig make_rig(const RigSpec& spec)
{
  CameraRig rig;
  rig.frame_rate = spec.frame_rate;
  for (int k = 0; k < spec.cameras; ++k)
  {
    const double angle = 2.0 * kPi * k / spec.cameras + 0.1;
    const double h = spec.height_min + (spec.height_max - spec.height_min) * (k % 4) / 3.0;
    const Eigen::Vector3d eye(spec.radius * std::cos(angle), spec.radius * std::sin(angle), h);
    Camera cam;
    char name[16];
    std::snprintf(name, sizeof(name), "cam%02d", k);
    cam.name = name;
    cam.image_size = spec.image_size;
    cam.focal = Eigen::Vector2d::Constant(spec.focal);
    cam.principal = 0.5 * spec.image_size.cast<double>();
    cam.k1 = k % 2 == 0 ? spec.k1 : -spec.k1;
    cam.rotation = look_at_rotation(eye, spec.target);
    cam.translation = -cam.rotation * eye;
    rig.cameras.push_back(cam);
  }
  rig.validate();
  return rig;
}

Eigen::VectorXd gait_pose(const SkeletonModel& model, const MotionSpec& m, double t)
{
  Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.dof_count()));
  const double a = m.amplitude;
  const double phi = 2.0 * kPi * m.gait_hz * t + m.phase;
  auto put = [&](const std::string& name, double v) {
    const int d = model.dof_index(name);
    if (d >= 0)
      q[d] = v;
  };

  put("pelvis_tx", -0.5 * m.stride * m.gait_hz * m.duration_s + m.stride * m.gait_hz * t);
  put("pelvis_ty", a * 0.01 * std::sin(phi));
  put("pelvis_tz", 0.95 + a * 0.015 * std::cos(2.0 * phi));
  put("pelvis_rotation", a * 0.06 * std::sin(phi));
  put("pelvis_list", a * 0.04 * std::sin(phi));
  put("pelvis_tilt", a * 0.02 * std::sin(2.0 * phi));
  put("lumbar_extension", a * 0.03 * std::sin(2.0 * phi));
  put("lumbar_bending", a * 0.03 * std::sin(phi));
  put("lumbar_rotation", -a * 0.08 * std::sin(phi));
  put("neck_flexion", a * 0.02 * std::sin(2.0 * phi));
  put("neck_bending", -a * 0.02 * std::sin(phi));
  put("neck_rotation", a * 0.06 * std::sin(phi));

  for (const auto& [tag, offset] : {std::pair<std::string, double>{"l", 0.0}, {"r", kPi}})
  {
    const double p = phi + offset;
    put("hip_flexion_" + tag, 0.25 + a * (0.40 * std::cos(p) + 0.05 * std::cos(2.0 * p)));
    put("hip_adduction_" + tag, a * 0.03 * std::sin(p));
    put("hip_rotation_" + tag, a * 0.05 * std::sin(p));
    put("knee_angle_" + tag,
        a * (0.5 * (1.0 - std::cos(p - 0.3)) + 0.04 * (1.0 - std::cos(2.0 * (p - 0.3)))));
    put("ankle_angle_" + tag, a * (0.10 * std::sin(p + 0.5) + 0.05 * std::sin(2.0 * p)));
    put("subtalar_angle_" + tag, a * 0.05 * std::sin(p));
    put("mtp_angle_" + tag, a * 0.20 * std::sin(p + 1.0));
    put("arm_flex_" + tag, -a * 0.25 * std::cos(p));
    put("arm_add_" + tag, -0.15 + a * 0.03 * std::sin(p));
    put("arm_rot_" + tag, a * 0.10 * std::sin(p));
    put("elbow_flex_" + tag, 0.35 + a * 0.15 * std::cos(p + 0.3));
    put("pro_sup_" + tag, 0.2 + a * 0.1 * std::sin(p));
    put("wrist_flex_" + tag, a * 0.1 * std::sin(p));
    put("wrist_dev_" + tag, a * 0.05 * std::cos(p));
  }
  return q;
}

SyntheticMotion generate_motion(
    const SkeletonModel& model,
    const MotionSpec& motion,
    const ModelCalibration& calib,
    const std::vector<std::string>& keypoints,
    double frame_rate)
{
  const std::size_t T = frame_count(motion, frame_rate);
  SyntheticMotion out;
  out.poses.dof_names = model.dof_names();
  std::vector<double> times(T);
  for (std::size_t t = 0; t < T; ++t)
    times[t] = static_cast<double>(t) / frame_rate;
  out.poses.timestamps = times;
  std::vector<int> idx;
  for (const auto& k : keypoints)
  {
    const int m = model.marker_index(k);
    if (m < 0)
      throw ConfigError("keypoint '" + k + "' is not a model marker");
    idx.push_back(m);
  }
  out.markers = PointTrajectory(keypoints, times);
  for (std::size_t t = 0; t < T; ++t)
  {
    const Eigen::VectorXd q = gait_pose(model, motion, times[t]);
    out.poses.poses.push_back(q);
    const Eigen::Matrix3Xd X = forward_kinematics(model, calib, q);
    for (std::size_t j = 0; j < idx.size(); ++j)
      out.markers.set(t, j, X.col(idx[j]));
  }

  // Heel strikes: left foot at gait phase 0, right foot at phase pi.
  if (motion.gait_hz > 0.0)
  {
    const int calcn_l = model.body_index("calcn_l");
    const int calcn_r = model.body_index("calcn_r");
    const double t_end = times.back();
    for (const auto& [foot, offset] : {std::pair{Foot::Left, 0.0}, std::pair{Foot::Right, kPi}})
    {
      const int body = foot == Foot::Left ? calcn_l : calcn_r;
      if (body < 0)
        continue;
      const double first = (2.0 * kPi - offset - motion.phase) / (2.0 * kPi * motion.gait_hz);
      const double period = 1.0 / motion.gait_hz;
      double start = std::fmod(first, period);
      if (start < 0.0)
        start += period;
      for (double te = start; te <= t_end; te += period)
      {
        const Kinematics kin = compute_kinematics(model, calib, gait_pose(model, motion, te));
        out.events.push_back({te, foot, kin.body_origin[body]});
      }
    }
    std::sort(out.events.begin(), out.events.end(),
              [](const GaitEvent& a, const GaitEvent& b) { return a.time_s < b.time_s; });
  }
  return out;
}

ObservationSet render_observations(
    const PointTrajectory& markers,
    const CameraRig& rig,
    const CorruptionSpec& corruption,
    std::uint64_t seed,
    const std::string& keypoint_set_label)
{
  ObservationSet obs(markers.joint_names, rig.names(), markers.timestamps, keypoint_set_label);
  auto noise_rng = stream(seed, kNoiseStream);
  auto outlier_rng = stream(seed, kOutlierStream);
  auto occlusion_rng = stream(seed, kOcclusionStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t T = markers.n_frames();
  const std::size_t C = rig.size();
  const std::size_t J = markers.n_joints();

  // One occlusion window per selected (camera, keypoint) track.
  std::vector<std::pair<long, long>> window(C * J, {-1, -1});
  for (std::size_t i = 0; i < C * J; ++i)
  {
    const double pick = unit(occlusion_rng);
    const double where = unit(occlusion_rng);
    if (pick < corruption.occlusion_rate && corruption.occlusion_frames > 0)
    {
      const long len = std::min<long>(corruption.occlusion_frames, static_cast<long>(T));
      const long first = static_cast<long>(where * static_cast<double>(T - static_cast<std::size_t>(len) + 1));
      window[i] = {first, first + len};
    }
  }

  Eigen::Vector2d px;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c)
    {
      const Camera& cam = rig.cameras[c];
      for (std::size_t j = 0; j < J; ++j)
      {
        const Eigen::Vector2d n(normal(noise_rng), normal(noise_rng));
        const double scatter_draw = normal(noise_rng);
        const double outlier_pick = unit(outlier_rng);
        const Eigen::Vector2d outlier_px(unit(outlier_rng) * cam.image_size.x(),
                                         unit(outlier_rng) * cam.image_size.y());
        const double outlier_scatter = normal(outlier_rng);

        if (!markers.is_valid(t, j))
          continue;
        const Eigen::Vector3d X = markers.at(t, j);
        if (!project_with_jacobian(cam, X, px, nullptr) || !cam.in_image(px))
          continue;
        const double depth = (cam.rotation * X + cam.translation).z();
        double scatter_mm = 1000.0 * corruption.noise_px * depth / cam.focal.x()
                            * std::abs(1.0 + 0.25 * scatter_draw);
        px += corruption.noise_px * n;
        if (outlier_pick < corruption.outlier_probability)
        {
          px = outlier_px;
          scatter_mm = std::max(0.0, 200.0 + 50.0 * outlier_scatter);
        }
        double conf = std_to_confidence(scatter_mm);
        const auto [first, last] = window[c * J + j];
        if (static_cast<long>(t) >= first && static_cast<long>(t) < last)
          conf = 0.0;
        obs.set(t, c, j, px, conf);
      }
    }
  return obs;
}

ModelCalibration default_true_calibration(const SkeletonModel& model)
{
  ModelCalibration calib = ModelCalibration::identity(model);
  for (const char* side : {"l", "r"})
  {
    const int femur = model.body_index(std::string("femur_") + side);
    const int tibia = model.body_index(std::string("tibia_") + side);
    if (femur >= 0)
      calib.scales[femur] = 1.07;
    if (tibia >= 0)
      calib.scales[tibia] = 1.0 / 1.07;
  }
  return calib;
}

std::vector<std::string> preset_names()
{
  return {"clean-walk", "noisy-walk", "sparse-25-walk", "biased-markers"};
}

SyntheticScenario preset_scenario(const std::string& name, std::uint64_t seed)
{
  const SkeletonModel& model = default_40_model();
  SyntheticScenario s;
  s.name = name;
  s.seed = seed;
  s.keypoints = model.marker_names();
  s.subjects = {default_true_calibration(model)};
  if (name == "clean-walk")
  {
    s.motion.duration_s = 50.0 / 30.0;
  }
  else if (name == "noisy-walk" || name == "sparse-25-walk")
  {
    s.motion.duration_s = 120.0 / 30.0;
    s.corruption = {2.0, 0.05, 0.05, 10};
    if (name == "sparse-25-walk")
    {
      s.selection = sparse_25_marker_names();
      s.keypoint_set_label = "sparse-25";
    }
  }
  else if (name == "biased-markers")
  {
    s.motion.duration_s = 40.0 / 30.0;
    s.corruption.noise_px = 0.5;
    s.subjects.clear();
    for (double g : {0.96, 1.0, 1.05})
    {
      ModelCalibration c = default_true_calibration(model);
      c.scales *= g;
      s.subjects.push_back(c);
    }
    auto rng = stream(seed, kBiasStream);
    std::normal_distribution<double> normal(0.0, 1.0);
    s.marker_bias.assign(model.n_markers(), Eigen::Vector3d::Zero());
    for (std::size_t m = 0; m < model.n_markers(); ++m)
    {
      Eigen::Vector3d d(normal(rng), normal(rng), normal(rng));
      if (!model.is_frozen(static_cast<int>(m)))
        s.marker_bias[m] = 0.02 * d.normalized();
    }
  }
  else
    throw UnknownPreset("'" + name + "'");
  return s;
}

Fixture make_fixture(const SyntheticScenario& scenario)
{
  Fixture f;
  f.scenario = scenario;
  f.nominal = default_40_model();
  scenario.validate(f.nominal);
  if (scenario.marker_bias.empty())
    f.model = f.nominal;
  else
  {
    std::vector<Eigen::Vector3d> offsets;
    for (std::size_t m = 0; m < f.nominal.n_markers(); ++m)
      offsets.push_back(f.nominal.markers()[m].offset + scenario.marker_bias[m]);
    f.model = f.nominal.with_marker_offsets(offsets);
  }
  f.rig = make_rig(scenario.rig);
  for (std::size_t k = 0; k < scenario.subjects.size(); ++k)
  {
    FixtureSubject sub;
    sub.calib = scenario.subjects[k];
    sub.motion = generate_motion(f.model, scenario.motion, sub.calib, scenario.keypoints,
                                 scenario.rig.frame_rate);
    const std::uint64_t seed = scenario.seed + 1000003ULL * k;
    if (scenario.selection.empty())
      sub.observations = render_observations(sub.motion.markers, f.rig, scenario.corruption, seed,
                                             scenario.keypoint_set_label);
    else
    {
      sub.observations
          = render_observations(sub.motion.markers, f.rig, scenario.corruption, seed)
                .select_joints(scenario.selection, scenario.keypoint_set_label);
      PointTrajectory kept(scenario.selection, sub.motion.markers.timestamps);
      for (std::size_t t = 0; t < kept.n_frames(); ++t)
        for (std::size_t j = 0; j < kept.n_joints(); ++j)
          kept.set(t, j, sub.motion.markers.at(t, static_cast<std::size_t>(
                                                        sub.motion.markers.find(kept.joint_names[j]))));
      sub.motion.markers = std::move(kept);
    }
    f.subjects.push_back(std::move(sub));
  }
  return f;
}

Fixture make_fixture(const std::string& preset, std::uint64_t seed)
{
  return make_fixture(preset_scenario(preset, seed));
}

void write_fixture(const Fixture& fixture, const std::filesystem::path& dir)
{
  save_rig(fixture.rig, dir / "rig.json");
  save_model(fixture.nominal, dir / "model.json");
  json subjects = json::array();
  for (std::size_t k = 0; k < fixture.subjects.size(); ++k)
  {
    const auto& s = fixture.subjects[k];
    const std::filesystem::path sub
        = fixture.subjects.size() == 1 ? dir : dir / ("subject_" + std::to_string(k));
    save_observations(s.observations, sub / "observations.jsonl");
    save_pose_csv(s.motion.poses, sub / "truth_poses.csv");
    save_calibration(fixture.nominal, s.calib, sub / "truth_calibration.json");
    save_trajectory(s.motion.markers, sub / "truth_markers.json");
    save_events(s.motion.events, sub / "events.json");
    subjects.push_back(std::filesystem::relative(sub, dir).generic_string());
  }
  const auto& sc = fixture.scenario;
  json manifest;
  manifest["scenario"] = sc.name;
  manifest["seed"] = sc.seed;
  manifest["keypoint_set_label"] = sc.keypoint_set_label;
  manifest["frames"] = fixture.subjects.front().observations.n_frames();
  manifest["rig"] = {{"cameras", sc.rig.cameras}, {"radius_m", sc.rig.radius},
                     {"height_m", {sc.rig.height_min, sc.rig.height_max}},
                     {"focal_px", sc.rig.focal}, {"k1", sc.rig.k1},
                     {"frame_rate", sc.rig.frame_rate}};
  manifest["motion"] = {{"gait_hz", sc.motion.gait_hz}, {"stride_m", sc.motion.stride},
                        {"duration_s", sc.motion.duration_s}, {"amplitude", sc.motion.amplitude},
                        {"phase", sc.motion.phase}};
  manifest["corruption"] = {{"noise_px", sc.corruption.noise_px},
                            {"outlier_probability", sc.corruption.outlier_probability},
                            {"occlusion_rate", sc.corruption.occlusion_rate},
                            {"occlusion_frames", sc.corruption.occlusion_frames}};
  if (!sc.marker_bias.empty())
  {
    json bias = json::object();
    for (std::size_t m = 0; m < sc.marker_bias.size(); ++m)
      if (sc.marker_bias[m].squaredNorm() > 0.0)
        bias[fixture.nominal.markers()[m].name] = json_util::to_array(sc.marker_bias[m]);
    manifest["marker_bias_m"] = bias;
  }
  manifest["subjects"] = subjects;
  json_util::write_file(dir / "manifest.json", manifest);
}

} // namespace mocap
