#include "mocap/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

using json_util::json;

std::string to_string(JointType type)
{
  switch (type)
  {
    case JointType::Free6:
      return "free6";
    case JointType::Ball3:
      return "ball3";
    case JointType::Hinge1:
      return "hinge1";
    case JointType::Universal2:
      return "universal2";
  }
  return "?";
}

std::string to_string(MarkerKind kind)
{
  return kind == MarkerKind::Anatomical ? "anatomical" : "tracking";
}

int rotation_count(JointType type)
{
  switch (type)
  {
    case JointType::Free6:
    case JointType::Ball3:
      return 3;
    case JointType::Hinge1:
      return 1;
    case JointType::Universal2:
      return 2;
  }
  return 0;
}

namespace {

JointType joint_type_from_string(const std::string& s, const std::string& ctx)
{
  if (s == "free6")
    return JointType::Free6;
  if (s == "ball3")
    return JointType::Ball3;
  if (s == "hinge1")
    return JointType::Hinge1;
  if (s == "universal2")
    return JointType::Universal2;
  throw ParseError(ctx + ": unknown joint type '" + s + "'");
}

MarkerKind marker_kind_from_string(const std::string& s, const std::string& ctx)
{
  if (s == "anatomical")
    return MarkerKind::Anatomical;
  if (s == "tracking")
    return MarkerKind::Tracking;
  throw ParseError(ctx + ": unknown marker kind '" + s + "'");
}

} // namespace

//==============================================================================
SkeletonModel::SkeletonModel(
    std::vector<Body> bodies,
    std::vector<Joint> joints,
    std::vector<Marker> markers,
    std::vector<std::string> frozen_markers)
  : mBodies(std::move(bodies)),
    mJoints(std::move(joints)),
    mMarkers(std::move(markers)),
    mFrozen(std::move(frozen_markers))
{
  build();
}

void SkeletonModel::build()
{
  const int nb = static_cast<int>(mBodies.size());
  mBodyIndex.clear();
  for (int b = 0; b < nb; ++b)
    if (!mBodyIndex.emplace(mBodies[b].name, b).second)
      throw TopologyError("duplicate body '" + mBodies[b].name + "'");

  mParent.assign(nb, -1);
  int roots = 0;
  for (int b = 0; b < nb; ++b)
  {
    if (mBodies[b].parent.empty())
    {
      ++roots;
      continue;
    }
    auto it = mBodyIndex.find(mBodies[b].parent);
    if (it == mBodyIndex.end())
      throw TopologyError(
          "body '" + mBodies[b].name + "' has unknown parent '" + mBodies[b].parent + "'");
    mParent[b] = it->second;
  }
  if (nb > 0 && roots != 1)
    throw TopologyError("model must have exactly one root body");

  // Ancestor chains; a walk longer than the body count means a cycle.
  mChain.assign(nb, {});
  for (int b = 0; b < nb; ++b)
  {
    std::vector<int> chain;
    int cur = b;
    while (cur >= 0)
    {
      chain.push_back(cur);
      if (static_cast<int>(chain.size()) > nb)
        throw TopologyError("cycle through body '" + mBodies[b].name + "'");
      cur = mParent[cur];
    }
    std::reverse(chain.begin(), chain.end());
    mChain[b] = std::move(chain);
  }
  mOrder.resize(nb);
  for (int b = 0; b < nb; ++b)
    mOrder[b] = b;
  std::stable_sort(mOrder.begin(), mOrder.end(), [&](int a, int b) {
    return mChain[a].size() < mChain[b].size();
  });

  mJointOfBody.assign(nb, -1);
  mFirstDof.assign(mJoints.size(), 0);
  mDofs.clear();
  for (std::size_t ji = 0; ji < mJoints.size(); ++ji)
  {
    Joint& j = mJoints[ji];
    auto it = mBodyIndex.find(j.body);
    if (it == mBodyIndex.end())
      throw TopologyError("joint '" + j.name + "' moves unknown body '" + j.body + "'");
    const int b = it->second;
    if (mJointOfBody[b] >= 0)
      throw TopologyError("body '" + j.body + "' has more than one joint");
    mJointOfBody[b] = static_cast<int>(ji);
    const bool is_root = mParent[b] < 0;
    if (is_root != (j.type == JointType::Free6))
      throw TopologyError("the root body, and only the root, must use a free6 joint");

    const int nrot = rotation_count(j.type);
    if (static_cast<int>(j.axes.size()) != nrot)
      throw ValidationError("joint '" + j.name + "' has the wrong number of axes");
    for (const auto& a : j.axes)
      if (std::abs(a.norm() - 1.0) > 1e-9)
        throw ValidationError("joint '" + j.name + "' axis is not unit length");
    const bool limited = j.type != JointType::Free6;
    if (limited)
    {
      if (static_cast<int>(j.lower.size()) != nrot || static_cast<int>(j.upper.size()) != nrot)
        throw ValidationError("joint '" + j.name + "' needs one limit pair per DOF");
      for (int k = 0; k < nrot; ++k)
        if (!(j.lower[k] < j.upper[k]))
          throw ValidationError("joint '" + j.name + "' has lower >= upper");
    }
    const int ntrans = j.type == JointType::Free6 ? 3 : 0;
    const int ndof = ntrans + nrot;
    if (j.dof_names.empty())
      for (int k = 0; k < ndof; ++k)
        j.dof_names.push_back(j.name + "_" + std::to_string(k));
    if (static_cast<int>(j.dof_names.size()) != ndof)
      throw ValidationError("joint '" + j.name + "' has the wrong number of DOF names");

    mFirstDof[ji] = static_cast<int>(mDofs.size());
    for (int k = 0; k < ndof; ++k)
    {
      DofInfo d;
      d.name = j.dof_names[k];
      d.joint = static_cast<int>(ji);
      d.body = b;
      d.translation = k < ntrans;
      d.slot = d.translation ? k : k - ntrans;
      d.limited = limited && !d.translation;
      if (d.limited)
      {
        d.lower = j.lower[d.slot];
        d.upper = j.upper[d.slot];
      }
      mDofs.push_back(d);
    }
  }
  for (int b = 0; b < nb; ++b)
    if (mJointOfBody[b] < 0)
      throw TopologyError("body '" + mBodies[b].name + "' has no joint");

  std::set<std::string> dof_seen;
  for (const auto& d : mDofs)
    if (!dof_seen.insert(d.name).second)
      throw ValidationError("duplicate DOF name '" + d.name + "'");

  mMarkerIndex.clear();
  mMarkerBody.assign(mMarkers.size(), -1);
  for (std::size_t m = 0; m < mMarkers.size(); ++m)
  {
    if (!mMarkerIndex.emplace(mMarkers[m].name, static_cast<int>(m)).second)
      throw ValidationError("duplicate marker '" + mMarkers[m].name + "'");
    auto it = mBodyIndex.find(mMarkers[m].body);
    if (it == mBodyIndex.end())
      throw TopologyError(
          "marker '" + mMarkers[m].name + "' is attached to unknown body '" + mMarkers[m].body
          + "'");
    mMarkerBody[m] = it->second;
  }
  mFrozenFlag.assign(mMarkers.size(), 0);
  for (const auto& f : mFrozen)
  {
    auto it = mMarkerIndex.find(f);
    if (it == mMarkerIndex.end())
      throw ValidationError("frozen marker '" + f + "' is not a model marker");
    mFrozenFlag[it->second] = 1;
  }
}

int SkeletonModel::body_index(const std::string& name) const
{
  auto it = mBodyIndex.find(name);
  return it == mBodyIndex.end() ? -1 : it->second;
}

int SkeletonModel::marker_index(const std::string& name) const
{
  auto it = mMarkerIndex.find(name);
  return it == mMarkerIndex.end() ? -1 : it->second;
}

int SkeletonModel::dof_index(const std::string& name) const
{
  for (std::size_t i = 0; i < mDofs.size(); ++i)
    if (mDofs[i].name == name)
      return static_cast<int>(i);
  return -1;
}

std::vector<std::string> SkeletonModel::marker_names() const
{
  std::vector<std::string> out;
  for (const auto& m : mMarkers)
    out.push_back(m.name);
  return out;
}

std::vector<std::string> SkeletonModel::dof_names() const
{
  std::vector<std::string> out;
  for (const auto& d : mDofs)
    out.push_back(d.name);
  return out;
}

SkeletonModel SkeletonModel::with_marker_offsets(const std::vector<Eigen::Vector3d>& offsets) const
{
  if (offsets.size() != mMarkers.size())
    throw ShapeMismatch("marker offset count does not match the model");
  auto markers = mMarkers;
  for (std::size_t m = 0; m < markers.size(); ++m)
    markers[m].offset = offsets[m];
  return SkeletonModel(mBodies, mJoints, markers, mFrozen);
}

SkeletonModel SkeletonModel::with_markers(const std::vector<std::string>& names) const
{
  std::set<std::string> keep(names.begin(), names.end());
  std::vector<Marker> markers;
  for (const auto& m : mMarkers)
    if (keep.count(m.name))
      markers.push_back(m);
  std::vector<std::string> frozen;
  for (const auto& f : mFrozen)
    if (keep.count(f))
      frozen.push_back(f);
  return SkeletonModel(mBodies, mJoints, markers, frozen);
}

//==============================================================================
ModelCalibration ModelCalibration::identity(const SkeletonModel& model)
{
  ModelCalibration c;
  c.scales = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(model.n_bodies()));
  c.offsets.assign(model.n_markers(), Eigen::Vector3d::Zero());
  return c;
}

void ModelCalibration::validate(const SkeletonModel& model, double max_anatomical_offset) const
{
  if (static_cast<std::size_t>(scales.size()) != model.n_bodies()
      || offsets.size() != model.n_markers())
    throw ShapeMismatch("calibration does not match the model");
  for (Eigen::Index i = 0; i < scales.size(); ++i)
    if (!(scales[i] > 0.0))
      throw ValidationError("scales must be positive");
  for (std::size_t m = 0; m < offsets.size(); ++m)
    if (model.markers()[m].kind == MarkerKind::Anatomical
        && offsets[m].norm() > max_anatomical_offset)
      throw ValidationError("anatomical marker offset exceeds bound");
}

void PoseSequence::validate() const
{
  if (poses.size() != timestamps.size())
    throw ShapeMismatch("pose count does not match timestamps");
  for (const auto& p : poses)
  {
    if (static_cast<std::size_t>(p.size()) != dof_names.size())
      throw ShapeMismatch("pose length does not match DOF names");
    if (!p.allFinite())
      throw ValidationError("non-finite pose");
  }
}

//==============================================================================
namespace {

void check_shapes(
    const SkeletonModel& model, const ModelCalibration& calib, const Eigen::VectorXd& pose)
{
  if (static_cast<std::size_t>(pose.size()) != model.dof_count())
    throw ShapeMismatch(
        "pose has " + std::to_string(pose.size()) + " entries, model has "
        + std::to_string(model.dof_count()) + " DOFs");
  if (static_cast<std::size_t>(calib.scales.size()) != model.n_bodies()
      || calib.offsets.size() != model.n_markers())
    throw ShapeMismatch("calibration does not match the model");
}

} // namespace

Kinematics compute_kinematics(
    const SkeletonModel& model, const ModelCalibration& calib, const Eigen::VectorXd& pose)
{
  check_shapes(model, calib, pose);
  const std::size_t nb = model.n_bodies();
  Kinematics kin;
  kin.body_rotation.resize(nb);
  kin.body_origin.resize(nb);
  kin.dof_axis.resize(model.dof_count());
  kin.dof_origin.resize(model.dof_count());

  for (int b : model.order())
  {
    const int p = model.parent(b);
    const Joint& joint = model.joints()[model.joint_of(b)];
    const int first = model.first_dof(model.joint_of(b));
    Eigen::Matrix3d R = p >= 0 ? kin.body_rotation[p] : Eigen::Matrix3d::Identity();
    Eigen::Vector3d origin = p >= 0
        ? Eigen::Vector3d(kin.body_origin[p] + R * (calib.scales[p] * model.bodies()[b].offset))
        : model.bodies()[b].offset;
    int d = first;
    if (joint.type == JointType::Free6)
    {
      for (int k = 0; k < 3; ++k, ++d)
      {
        const Eigen::Vector3d dir = R.col(k);
        kin.dof_axis[d] = dir;
        origin += pose[d] * dir;
      }
      for (int k = 0; k < 3; ++k)
        kin.dof_origin[first + k] = origin;
    }
    for (const auto& axis : joint.axes)
    {
      kin.dof_axis[d] = R * axis;
      kin.dof_origin[d] = origin;
      R = R * Eigen::AngleAxisd(pose[d], axis).toRotationMatrix();
      ++d;
    }
    kin.body_rotation[b] = R;
    kin.body_origin[b] = origin;
  }
  return kin;
}

Eigen::Matrix3Xd markers_from_kinematics(
    const SkeletonModel& model, const ModelCalibration& calib, const Kinematics& kin)
{
  Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(model.n_markers()));
  for (std::size_t m = 0; m < model.n_markers(); ++m)
  {
    const int b = model.marker_body(static_cast<int>(m));
    out.col(static_cast<Eigen::Index>(m)) = kin.body_origin[b]
        + kin.body_rotation[b] * (calib.scales[b] * (model.markers()[m].offset + calib.offsets[m]));
  }
  return out;
}

Eigen::Matrix3Xd forward_kinematics(
    const SkeletonModel& model, const ModelCalibration& calib, const Eigen::VectorXd& pose)
{
  return markers_from_kinematics(model, calib, compute_kinematics(model, calib, pose));
}

Eigen::MatrixXd FkJacobian::dense() const
{
  const Eigen::Index rows = pose.rows();
  const Eigen::Index M = static_cast<Eigen::Index>(offset.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, pose.cols() + scale.cols() + 3 * M);
  out.leftCols(pose.cols()) = pose;
  out.middleCols(pose.cols(), scale.cols()) = scale;
  for (Eigen::Index m = 0; m < M; ++m)
    out.block(3 * m, pose.cols() + scale.cols() + 3 * m, 3, 3) = offset[m];
  return out;
}

FkJacobian fk_jacobian(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const Kinematics& kin,
    Eigen::Matrix3Xd* markers_out)
{
  const Eigen::Index M = static_cast<Eigen::Index>(model.n_markers());
  const Eigen::Index D = static_cast<Eigen::Index>(model.dof_count());
  FkJacobian J;
  J.pose = Eigen::MatrixXd::Zero(3 * M, D);
  J.scale = Eigen::MatrixXd::Zero(3 * M, static_cast<Eigen::Index>(model.n_bodies()));
  J.offset.resize(static_cast<std::size_t>(M));

  const Eigen::Matrix3Xd x = markers_from_kinematics(model, calib, kin);
  for (Eigen::Index m = 0; m < M; ++m)
  {
    const int b = model.marker_body(static_cast<int>(m));
    const Eigen::Vector3d xm = x.col(m);
    const auto& chain = model.chain(b);
    for (std::size_t ci = 0; ci < chain.size(); ++ci)
    {
      const int a = chain[ci];
      const int ji = model.joint_of(a);
      const int first = model.first_dof(ji);
      const int ndof = rotation_count(model.joints()[ji].type)
                       + (model.joints()[ji].type == JointType::Free6 ? 3 : 0);
      for (int d = first; d < first + ndof; ++d)
      {
        if (model.dofs()[d].translation)
          J.pose.block<3, 1>(3 * m, d) = kin.dof_axis[d];
        else
          J.pose.block<3, 1>(3 * m, d) = kin.dof_axis[d].cross(xm - kin.dof_origin[d]);
      }
      if (a == b)
        J.scale.block<3, 1>(3 * m, a)
            = kin.body_rotation[a] * (model.markers()[m].offset + calib.offsets[m]);
      else
        J.scale.block<3, 1>(3 * m, a) = kin.body_rotation[a] * model.bodies()[chain[ci + 1]].offset;
    }
    J.offset[m] = calib.scales[b] * kin.body_rotation[b];
  }
  if (markers_out)
    *markers_out = x;
  return J;
}

FkJacobian fk_jacobian(
    const SkeletonModel& model, const ModelCalibration& calib, const Eigen::VectorXd& pose)
{
  return fk_jacobian(model, calib, compute_kinematics(model, calib, pose), nullptr);
}

Eigen::VectorXd joint_limit_excess(const SkeletonModel& model, const Eigen::VectorXd& pose)
{
  if (static_cast<std::size_t>(pose.size()) != model.dof_count())
    throw ShapeMismatch("pose length does not match the model");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(pose.size());
  for (std::size_t d = 0; d < model.dof_count(); ++d)
  {
    const DofInfo& info = model.dofs()[d];
    if (!info.limited)
      continue;
    const double q = pose[static_cast<Eigen::Index>(d)];
    out[static_cast<Eigen::Index>(d)] = std::max({0.0, info.lower - q, q - info.upper});
  }
  return out;
}

Eigen::VectorXd project_to_limits(const SkeletonModel& model, const Eigen::VectorXd& pose)
{
  Eigen::VectorXd out = pose;
  for (std::size_t d = 0; d < model.dof_count(); ++d)
  {
    const DofInfo& info = model.dofs()[d];
    if (info.limited)
      out[static_cast<Eigen::Index>(d)]
          = std::clamp(out[static_cast<Eigen::Index>(d)], info.lower, info.upper);
  }
  return out;
}

SkeletonModel refine_markers(
    const SkeletonModel& model,
    const std::vector<ModelCalibration>& calibrations,
    const std::vector<std::string>& frozen)
{
  if (calibrations.empty())
    throw EmptyCalibrationList("refine_markers needs at least one calibration");
  std::set<std::string> frozen_set(frozen.begin(), frozen.end());
  std::vector<Eigen::Vector3d> offsets;
  for (std::size_t m = 0; m < model.n_markers(); ++m)
  {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& c : calibrations)
    {
      if (c.offsets.size() != model.n_markers())
        throw ShapeMismatch("calibration does not match the model");
      mean += c.offsets[m];
    }
    mean /= static_cast<double>(calibrations.size());
    Eigen::Vector3d off = model.markers()[m].offset;
    if (!frozen_set.count(model.markers()[m].name))
      off += mean;
    offsets.push_back(off);
  }
  return model.with_marker_offsets(offsets);
}

std::vector<std::pair<int, int>> rigid_marker_pairs(
    const SkeletonModel& model, const std::vector<std::string>& names, int per_marker)
{
  std::map<int, std::vector<int>> by_body;
  for (std::size_t i = 0; i < names.size(); ++i)
  {
    const int m = model.marker_index(names[i]);
    if (m >= 0)
      by_body[model.marker_body(m)].push_back(static_cast<int>(i));
  }
  std::set<std::pair<int, int>> edges;
  for (const auto& [body, list] : by_body)
  {
    const int n = static_cast<int>(list.size());
    for (int i = 0; i < n; ++i)
      for (int k = 1; k <= per_marker && k < n; ++k)
      {
        int a = list[i], b = list[(i + k) % n];
        if (a > b)
          std::swap(a, b);
        edges.emplace(a, b);
      }
  }
  return {edges.begin(), edges.end()};
}

//==============================================================================
// Files

namespace {

Eigen::Vector3d vec3(const json& j, const std::string& ctx)
{
  auto v = j.get<std::vector<double>>();
  if (v.size() != 3)
    throw ParseError(ctx + ": expected a 3-vector");
  return {v[0], v[1], v[2]};
}

} // namespace

SkeletonModel load_model(const std::filesystem::path& path)
{
  const json doc = json_util::read_file(path);
  const std::string ctx = path.string();
  std::vector<Body> bodies;
  std::vector<Joint> joints;
  std::vector<Marker> markers;
  try
  {
    for (const auto& jb : json_util::field(doc, "bodies", ctx))
    {
      Body b;
      b.name = json_util::get<std::string>(jb, "name", ctx + " body");
      const json& parent = json_util::field(jb, "parent", ctx + " body '" + b.name + "'");
      b.parent = parent.is_null() ? "" : parent.get<std::string>();
      b.offset = json_util::vec<3>(jb, "offset", ctx + " body '" + b.name + "'");
      b.default_length = json_util::get_or<double>(jb, "default_length", 0.0, ctx);
      bodies.push_back(b);
    }
    for (const auto& jj : json_util::field(doc, "joints", ctx))
    {
      Joint j;
      j.name = json_util::get<std::string>(jj, "name", ctx + " joint");
      const std::string jctx = ctx + " joint '" + j.name + "'";
      j.type = joint_type_from_string(json_util::get<std::string>(jj, "type", jctx), jctx);
      j.body = json_util::get<std::string>(jj, "body", jctx);
      for (const auto& a : json_util::field(jj, "axes", jctx))
        j.axes.push_back(vec3(a, jctx));
      if (jj.contains("limits"))
        for (const auto& l : jj["limits"])
        {
          auto pair = l.get<std::vector<double>>();
          if (pair.size() != 2)
            throw ParseError(jctx + ": limits entries must be [lo, hi]");
          j.lower.push_back(pair[0]);
          j.upper.push_back(pair[1]);
        }
      j.dof_names = json_util::get_or<std::vector<std::string>>(jj, "dof_names", {}, jctx);
      joints.push_back(j);
    }
    for (const auto& jm : json_util::field(doc, "markers", ctx))
    {
      Marker m;
      m.name = json_util::get<std::string>(jm, "name", ctx + " marker");
      const std::string mctx = ctx + " marker '" + m.name + "'";
      m.body = json_util::get<std::string>(jm, "body", mctx);
      m.offset = json_util::vec<3>(jm, "offset", mctx);
      m.kind = marker_kind_from_string(json_util::get<std::string>(jm, "kind", mctx), mctx);
      markers.push_back(m);
    }
  }
  catch (const json::exception& e)
  {
    throw ParseError(ctx + ": " + e.what());
  }
  auto frozen = json_util::get_or<std::vector<std::string>>(doc, "frozen_markers", {}, ctx);
  return SkeletonModel(bodies, joints, markers, frozen);
}

void save_model(const SkeletonModel& model, const std::filesystem::path& path)
{
  json doc;
  doc["bodies"] = json::array();
  for (const auto& b : model.bodies())
  {
    json j;
    j["name"] = b.name;
    j["parent"] = b.parent.empty() ? json(nullptr) : json(b.parent);
    j["offset"] = json_util::to_array(b.offset);
    j["default_length"] = b.default_length;
    doc["bodies"].push_back(j);
  }
  doc["joints"] = json::array();
  for (const auto& jt : model.joints())
  {
    json j;
    j["name"] = jt.name;
    j["type"] = to_string(jt.type);
    j["body"] = jt.body;
    j["axes"] = json::array();
    for (const auto& a : jt.axes)
      j["axes"].push_back(json_util::to_array(a));
    if (!jt.lower.empty())
    {
      j["limits"] = json::array();
      for (std::size_t k = 0; k < jt.lower.size(); ++k)
        j["limits"].push_back({jt.lower[k], jt.upper[k]});
    }
    j["dof_names"] = jt.dof_names;
    doc["joints"].push_back(j);
  }
  doc["markers"] = json::array();
  for (const auto& m : model.markers())
  {
    json j;
    j["name"] = m.name;
    j["body"] = m.body;
    j["offset"] = json_util::to_array(m.offset);
    j["kind"] = to_string(m.kind);
    doc["markers"].push_back(j);
  }
  doc["frozen_markers"] = model.frozen_markers();
  json_util::write_file(path, doc);
}

SkeletonModel resolve_model(const std::string& name_or_path)
{
  if (name_or_path.empty() || name_or_path == "default-40")
    return default_40_model();
  return load_model(name_or_path);
}

void save_pose_csv(const PoseSequence& poses, const std::filesystem::path& path)
{
  poses.validate();
  std::string out = "time";
  for (const auto& n : poses.dof_names)
    out += "," + n;
  out += "\n";
  char buf[64];
  for (std::size_t t = 0; t < poses.size(); ++t)
  {
    std::snprintf(buf, sizeof(buf), "%.17g", poses.timestamps[t]);
    out += buf;
    for (Eigen::Index d = 0; d < poses.poses[t].size(); ++d)
    {
      std::snprintf(buf, sizeof(buf), ",%.17g", poses.poses[t][d]);
      out += buf;
    }
    out += "\n";
  }
  json_util::write_text(path, out);
}

PoseSequence load_pose_csv(const std::filesystem::path& path)
{
  std::istringstream in(json_util::read_text(path));
  std::string line;
  PoseSequence out;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line))
    throw ParseError(path.string() + ": empty pose file");
  ++line_no;
  auto header = split(line);
  if (header.empty() || header[0] != "time")
    throw ParseError(path.string() + ":1: header must start with 'time'");
  out.dof_names.assign(header.begin() + 1, header.end());
  while (std::getline(in, line))
  {
    ++line_no;
    if (line.empty())
      continue;
    auto cells = split(line);
    if (cells.size() != header.size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    try
    {
      out.timestamps.push_back(std::stod(cells[0]));
      Eigen::VectorXd q(static_cast<Eigen::Index>(cells.size() - 1));
      for (std::size_t k = 1; k < cells.size(); ++k)
        q[static_cast<Eigen::Index>(k - 1)] = std::stod(cells[k]);
      out.poses.push_back(q);
    }
    catch (const std::exception&)
    {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return out;
}

void save_calibration(
    const SkeletonModel& model, const ModelCalibration& calib, const std::filesystem::path& path)
{
  json doc;
  doc["scales"] = json::object();
  for (std::size_t b = 0; b < model.n_bodies(); ++b)
    doc["scales"][model.bodies()[b].name] = calib.scales[static_cast<Eigen::Index>(b)];
  doc["offsets"] = json::object();
  for (std::size_t m = 0; m < model.n_markers(); ++m)
    doc["offsets"][model.markers()[m].name] = json_util::to_array(calib.offsets[m]);
  json_util::write_file(path, doc);
}

namespace {

ModelCalibration calibration_from_json(const SkeletonModel& model, const json& doc, const std::string& ctx)
{
  ModelCalibration c = ModelCalibration::identity(model);
  const json& scales = json_util::field(doc, "scales", ctx);
  for (std::size_t b = 0; b < model.n_bodies(); ++b)
    c.scales[static_cast<Eigen::Index>(b)]
        = json_util::get<double>(scales, model.bodies()[b].name.c_str(), ctx + " scales");
  const json& offsets = json_util::field(doc, "offsets", ctx);
  for (std::size_t m = 0; m < model.n_markers(); ++m)
    if (offsets.contains(model.markers()[m].name))
      c.offsets[m] = vec3(offsets[model.markers()[m].name], ctx + " offsets");
  return c;
}

} // namespace

ModelCalibration load_calibration(const SkeletonModel& model, const std::filesystem::path& path)
{
  const json doc = json_util::read_file(path);
  const json& block = doc.contains("calibration") ? doc["calibration"] : doc;
  return calibration_from_json(model, block, path.string());
}

} // namespace mocap
