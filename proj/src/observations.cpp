#include "mocap/observations.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

using json_util::json;

ObservationSet::ObservationSet(
    std::vector<std::string> joint_names,
    std::vector<std::string> camera_names,
    std::vector<double> timestamps,
    std::string keypoint_set_label)
  : mJointNames(std::move(joint_names)),
    mCameraNames(std::move(camera_names)),
    mTimestamps(std::move(timestamps)),
    mLabel(std::move(keypoint_set_label))
{
  const std::size_t n = mTimestamps.size() * mCameraNames.size() * mJointNames.size();
  mPixels.assign(n, Eigen::Vector2d::Zero());
  mConfidence.assign(n, 0.0);
  mPresent.assign(n, 0);
}

void ObservationSet::set(
    std::size_t t, std::size_t c, std::size_t j, const Eigen::Vector2d& px, double conf)
{
  const std::size_t i = index(t, c, j);
  mPixels[i] = px;
  mConfidence[i] = std::clamp(conf, 0.0, 1.0);
  mPresent[i] = 1;
}

void ObservationSet::set_absent(std::size_t t, std::size_t c, std::size_t j)
{
  const std::size_t i = index(t, c, j);
  mPixels[i].setZero();
  mConfidence[i] = 0.0;
  mPresent[i] = 0;
}

void ObservationSet::set_confidence(std::size_t t, std::size_t c, std::size_t j, double conf)
{
  mConfidence[index(t, c, j)] = std::clamp(conf, 0.0, 1.0);
}

void ObservationSet::validate() const
{
  for (std::size_t t = 1; t < mTimestamps.size(); ++t)
    if (!(mTimestamps[t] > mTimestamps[t - 1]))
      throw ValidationError("timestamps must be strictly increasing");
  for (std::size_t i = 0; i < mConfidence.size(); ++i)
  {
    if (!(mConfidence[i] >= 0.0 && mConfidence[i] <= 1.0))
      throw ValidationError("confidence outside [0,1]");
    if (!mPresent[i] && mConfidence[i] != 0.0)
      throw ValidationError("absent detection with nonzero confidence");
    if (mPresent[i] && !mPixels[i].allFinite())
      throw ValidationError("non-finite pixel");
  }
}

ObservationSet ObservationSet::select_joints(
    const std::vector<std::string>& names, std::string label) const
{
  std::vector<std::size_t> src;
  for (const auto& n : names)
  {
    auto it = std::find(mJointNames.begin(), mJointNames.end(), n);
    if (it == mJointNames.end())
      throw ShapeMismatch("joint '" + n + "' not present in observations");
    src.push_back(static_cast<std::size_t>(it - mJointNames.begin()));
  }
  ObservationSet out(names, mCameraNames, mTimestamps, std::move(label));
  for (std::size_t t = 0; t < n_frames(); ++t)
    for (std::size_t c = 0; c < n_cameras(); ++c)
      for (std::size_t k = 0; k < src.size(); ++k)
      {
        const std::size_t i = index(t, c, src[k]);
        const std::size_t o = out.index(t, c, k);
        out.mPixels[o] = mPixels[i];
        out.mConfidence[o] = mConfidence[i];
        out.mPresent[o] = mPresent[i];
      }
  return out;
}

double std_to_confidence(double sigma_mm)
{
  return 1.0 / (1.0 + std::exp((sigma_mm - 200.0) / 50.0));
}

void check_camera_alignment(const ObservationSet& obs, const CameraRig& rig)
{
  if (obs.camera_names() != rig.names())
    throw CameraMismatch("observation cameras do not match the rig cameras");
}

ObservationSet gate_observations(
    const ObservationSet& obs, const CameraRig& rig, double min_confidence)
{
  check_camera_alignment(obs, rig);
  ObservationSet out = obs;
  for (std::size_t t = 0; t < obs.n_frames(); ++t)
    for (std::size_t c = 0; c < obs.n_cameras(); ++c)
      for (std::size_t j = 0; j < obs.n_joints(); ++j)
      {
        if (!obs.present(t, c, j))
          continue;
        if (!rig.cameras[c].in_image(obs.pixel(t, c, j))
            || obs.confidence(t, c, j) < min_confidence)
          out.set_confidence(t, c, j, 0.0);
      }
  return out;
}

//==============================================================================
// Line-delimited file

ObservationSet load_observations(const std::filesystem::path& path)
{
  const std::string text = json_util::read_text(path);
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;

  auto next_record = [&](json& out) -> bool {
    while (std::getline(lines, line))
    {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos)
        continue;
      out = json_util::parse(line, path.string() + ":" + std::to_string(line_no));
      return true;
    }
    return false;
  };

  json header;
  if (!next_record(header))
    throw ParseError(path.string() + ": empty observations file");
  const std::string hctx = path.string() + ":" + std::to_string(line_no) + " header";
  const int version = json_util::get<int>(header, "schema_version", hctx);
  if (version != kObservationSchemaVersion)
    throw SchemaVersionError(
        "unsupported observation schema_version " + std::to_string(version));
  auto joints = json_util::get<std::vector<std::string>>(header, "joint_names", hctx);
  auto label = json_util::get<std::string>(header, "keypoint_set_label", hctx);
  auto timestamps = json_util::get<std::vector<double>>(header, "timestamps", hctx);

  // Records are buffered because the camera order may have to be inferred
  // from first appearance.
  std::vector<std::pair<json, std::size_t>> records;
  json rec;
  while (next_record(rec))
    records.emplace_back(std::move(rec), line_no);

  std::vector<std::string> cameras;
  if (header.contains("camera_names"))
    cameras = json_util::get<std::vector<std::string>>(header, "camera_names", hctx);
  else
    for (const auto& [r, ln] : records)
    {
      const auto name = json_util::get<std::string>(
          r, "camera", path.string() + ":" + std::to_string(ln));
      if (std::find(cameras.begin(), cameras.end(), name) == cameras.end())
        cameras.push_back(name);
    }

  std::map<std::string, std::size_t> cam_index;
  for (std::size_t i = 0; i < cameras.size(); ++i)
    cam_index[cameras[i]] = i;

  ObservationSet obs(joints, cameras, timestamps, label);
  for (const auto& [r, ln] : records)
  {
    const std::string ctx = path.string() + ":" + std::to_string(ln);
    const auto t = json_util::get<long long>(r, "t_index", ctx);
    if (t < 0 || static_cast<std::size_t>(t) >= timestamps.size())
      throw ParseError(ctx + ": t_index out of range");
    const auto cam = json_util::get<std::string>(r, "camera", ctx);
    auto it = cam_index.find(cam);
    if (it == cam_index.end())
      throw ParseError(ctx + ": unknown camera '" + cam + "'");
    const json& kp = json_util::field(r, "kp", ctx);
    if (!kp.is_array() || kp.size() != joints.size())
      throw ParseError(ctx + ": field 'kp' must list one entry per joint");
    for (std::size_t j = 0; j < joints.size(); ++j)
    {
      const json& e = kp[j];
      if (e.is_null())
        continue;
      if (!e.is_array() || e.size() != 3 || !e[0].is_number() || !e[1].is_number()
          || !e[2].is_number())
        throw ParseError(ctx + ": kp[" + std::to_string(j) + "] must be [u,v,conf] or null");
      const double conf = e[2].get<double>();
      if (!(conf >= 0.0 && conf <= 1.0))
        throw ParseError(ctx + ": kp[" + std::to_string(j) + "] confidence outside [0,1]");
      obs.set(
          static_cast<std::size_t>(t), it->second, j,
          Eigen::Vector2d(e[0].get<double>(), e[1].get<double>()), conf);
    }
  }
  try
  {
    obs.validate();
  }
  catch (const ValidationError& e)
  {
    throw ParseError(path.string() + ": " + e.what());
  }
  return obs;
}

void save_observations(const ObservationSet& obs, const std::filesystem::path& path)
{
  std::string out;
  json header;
  header["schema_version"] = kObservationSchemaVersion;
  header["joint_names"] = obs.joint_names();
  header["camera_names"] = obs.camera_names();
  header["keypoint_set_label"] = obs.keypoint_set_label();
  header["timestamps"] = obs.timestamps();
  out += header.dump() + "\n";
  for (std::size_t t = 0; t < obs.n_frames(); ++t)
    for (std::size_t c = 0; c < obs.n_cameras(); ++c)
    {
      json rec;
      rec["t_index"] = t;
      rec["camera"] = obs.camera_names()[c];
      json kp = json::array();
      for (std::size_t j = 0; j < obs.n_joints(); ++j)
      {
        if (!obs.present(t, c, j))
          kp.push_back(nullptr);
        else
        {
          const auto& px = obs.pixel(t, c, j);
          kp.push_back({px.x(), px.y(), obs.confidence(t, c, j)});
        }
      }
      rec["kp"] = std::move(kp);
      out += rec.dump() + "\n";
    }
  json_util::write_text(path, out);
}

} // namespace mocap
