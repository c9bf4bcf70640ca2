#include "mocap/ik_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

void IKConfig::validate() const
{
  if (!(alpha_joint >= 0.0) || !(alpha_anthro >= 0.0) || !(alpha_offset_anat >= 0.0)
      || !(alpha_offset_track >= 0.0))
    throw ConfigError("IK regularizer weights must be non-negative");
  if (outer_rounds < 1)
    throw ConfigError("IK outer_rounds must be at least 1");
  if (init_iterations < 1 || pose_iterations < 0 || calib_iterations < 0)
    throw ConfigError("IK iteration budgets must be non-negative");
  if (kernel == MarkerKernel::Huber && !(huber_delta > 0.0))
    throw ConfigError("IK huber_delta must be positive");
  if (!(tolerance >= 0.0))
    throw ConfigError("IK tolerance must be non-negative");
}

double ik_kernel(double r, const IKConfig& config)
{
  if (config.kernel == MarkerKernel::Huber && r > config.huber_delta)
    return 2.0 * config.huber_delta * r - config.huber_delta * config.huber_delta;
  return r * r;
}

double log_scale_variance(const Eigen::VectorXd& scales)
{
  if (scales.size() == 0)
    return 0.0;
  const Eigen::ArrayXd l = scales.array().log();
  return (l - l.mean()).square().mean();
}

namespace {

/// Solver context: model, trials and the target-to-marker mapping.
struct Problem
{
  const SkeletonModel& model;
  const std::vector<IKTrial>& trials;
  const IKConfig& config;
  std::vector<std::vector<int>> marker_of; // per trial, per target joint

  Problem(const SkeletonModel& m, const std::vector<IKTrial>& t, const IKConfig& c)
    : model(m), trials(t), config(c)
  {
    for (const auto& trial : trials)
    {
      const auto& tg = trial.targets;
      if (trial.weights.size() != 0
          && (trial.weights.rows() != static_cast<Eigen::Index>(tg.n_frames())
              || trial.weights.cols() != static_cast<Eigen::Index>(tg.n_joints())))
        throw ShapeMismatch("IK weights must be frames x joints");
      if (tg.points.size() != tg.n_frames() * tg.n_joints())
        throw ShapeMismatch("IK target trajectory is inconsistent");
      std::vector<int> map;
      for (const auto& name : tg.joint_names)
      {
        const int m = model.marker_index(name);
        if (m < 0)
          throw ShapeMismatch("target '" + name + "' is not a model marker");
        map.push_back(m);
      }
      marker_of.push_back(std::move(map));
    }
  }

  double weight(std::size_t trial, std::size_t t, std::size_t j) const
  {
    const auto& tr = trials[trial];
    if (!tr.targets.is_valid(t, j))
      return 0.0;
    if (tr.weights.size() == 0)
      return 1.0;
    return tr.weights(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
  }

  /// Marker term of one frame given marker positions.
  double marker_cost(std::size_t trial, std::size_t t, const Eigen::Matrix3Xd& X) const
  {
    double sum = 0.0;
    const auto& tg = trials[trial].targets;
    for (std::size_t j = 0; j < tg.n_joints(); ++j)
    {
      const double w = weight(trial, t, j);
      if (w <= 0.0)
        continue;
      sum += w * ik_kernel((X.col(marker_of[trial][j]) - tg.at(t, j)).norm(), config);
    }
    return sum;
  }

  double joint_cost(const Eigen::VectorXd& q) const
  {
    if (config.joint_limit_mode == JointLimitMode::Hard)
      return 0.0;
    return config.alpha_joint * joint_limit_excess(model, q).squaredNorm();
  }

  double calibration_cost(const ModelCalibration& calib) const
  {
    double sum = config.alpha_anthro * log_scale_variance(calib.scales);
    for (std::size_t m = 0; m < model.n_markers(); ++m)
      sum += offset_alpha(static_cast<int>(m)) * calib.offsets[m].squaredNorm();
    return sum;
  }

  double offset_alpha(int m) const
  {
    return model.markers()[m].kind == MarkerKind::Anatomical ? config.alpha_offset_anat
                                                             : config.alpha_offset_track;
  }

  /// Robust reweighting for the Gauss-Newton step.
  double irls(double w, double r) const
  {
    if (config.kernel == MarkerKernel::Huber && r > config.huber_delta)
      return w * config.huber_delta / r;
    return w;
  }

  int valid_count(std::size_t trial, std::size_t t) const
  {
    int n = 0;
    for (std::size_t j = 0; j < trials[trial].targets.n_joints(); ++j)
      n += weight(trial, t, j) > 0.0;
    return n;
  }
};

double frame_cost(
    const Problem& P, std::size_t trial, std::size_t t, const ModelCalibration& calib,
    const Eigen::VectorXd& q)
{
  return P.marker_cost(trial, t, forward_kinematics(P.model, calib, q)) + P.joint_cost(q);
}

/// Levenberg-Marquardt on one frame's pose with calibration fixed.
void solve_frame(
    const Problem& P, std::size_t trial, std::size_t t, const ModelCalibration& calib,
    Eigen::VectorXd& q, int iterations)
{
  const auto& model = P.model;
  const auto& tg = P.trials[trial].targets;
  const auto D = static_cast<Eigen::Index>(model.dof_count());
  const bool hard = P.config.joint_limit_mode == JointLimitMode::Hard;
  if (hard)
    q = project_to_limits(model, q);
  double cost = frame_cost(P, trial, t, calib, q);
  double mu = 1e-3;
  Eigen::Matrix3Xd X;
  for (int it = 0; it < iterations; ++it)
  {
    const Kinematics kin = compute_kinematics(model, calib, q);
    const FkJacobian fk = fk_jacobian(model, calib, kin, &X);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(D, D);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(D);
    for (std::size_t j = 0; j < tg.n_joints(); ++j)
    {
      const double w = P.weight(trial, t, j);
      if (w <= 0.0)
        continue;
      const int m = P.marker_of[trial][j];
      const Eigen::Vector3d e = X.col(m) - tg.at(t, j);
      const double we = P.irls(w, e.norm());
      const auto Jm = fk.pose.middleRows(3 * m, 3);
      H.noalias() += we * Jm.transpose() * Jm;
      g.noalias() += we * Jm.transpose() * e;
    }
    if (!hard && P.config.alpha_joint > 0.0)
    {
      for (Eigen::Index d = 0; d < D; ++d)
      {
        const DofInfo& info = model.dofs()[d];
        if (!info.limited)
          continue;
        if (q[d] < info.lower)
        {
          H(d, d) += P.config.alpha_joint;
          g[d] -= P.config.alpha_joint * (info.lower - q[d]);
        }
        else if (q[d] > info.upper)
        {
          H(d, d) += P.config.alpha_joint;
          g[d] += P.config.alpha_joint * (q[d] - info.upper);
        }
      }
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 12; ++attempt)
    {
      Eigen::MatrixXd A = H;
      A.diagonal().array() += mu * (H.diagonal().array() + 1e-9);
      Eigen::VectorXd qn = q - A.ldlt().solve(g);
      if (hard)
        qn = project_to_limits(model, qn);
      if (!qn.allFinite())
      {
        mu *= 4.0;
        continue;
      }
      const double cn = frame_cost(P, trial, t, calib, qn);
      if (cn < cost)
      {
        const double drop = cost - cn;
        q = qn;
        cost = cn;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (drop <= 1e-14 * (1.0 + cost))
          return;
        break;
      }
      mu *= 4.0;
    }
    if (!accepted)
      return;
  }
}

/// Root yaw grid with translation from the target centroid.
Eigen::VectorXd initial_pose(const Problem& P, std::size_t trial, std::size_t t,
                             const ModelCalibration& calib)
{
  const auto& model = P.model;
  const auto& tg = P.trials[trial].targets;
  const int root_joint = model.joint_of(model.order().front());
  const int first = model.first_dof(root_joint);
  Eigen::VectorXd best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 8; ++k)
  {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.dof_count()));
    q[first + 3] = std::numbers::pi * (k - 3) / 4.0;
    const Eigen::Matrix3Xd X = forward_kinematics(model, calib, q);
    Eigen::Vector3d target = Eigen::Vector3d::Zero(), model_c = Eigen::Vector3d::Zero();
    double wsum = 0.0;
    for (std::size_t j = 0; j < tg.n_joints(); ++j)
    {
      const double w = P.weight(trial, t, j);
      if (w <= 0.0)
        continue;
      target += w * tg.at(t, j);
      model_c += w * X.col(P.marker_of[trial][j]);
      wsum += w;
    }
    const Eigen::Vector3d shift = (target - model_c) / wsum;
    for (int a = 0; a < 3; ++a)
      q[first + a] = shift[a];
    const double c = frame_cost(P, trial, t, calib, q);
    if (c < best_cost)
    {
      best_cost = c;
      best = q;
    }
  }
  return best;
}

std::vector<PoseSequence> initialize_poses(const Problem& P, const ModelCalibration& calib)
{
  std::vector<PoseSequence> out;
  for (std::size_t k = 0; k < P.trials.size(); ++k)
  {
    const auto& tg = P.trials[k].targets;
    PoseSequence seq;
    seq.dof_names = P.model.dof_names();
    seq.timestamps = tg.timestamps;
    seq.poses.assign(tg.n_frames(), Eigen::VectorXd());
    std::size_t seed_frame = tg.n_frames();
    for (std::size_t t = 0; t < tg.n_frames(); ++t)
      if (P.valid_count(k, t) >= 4)
      {
        seed_frame = t;
        break;
      }
    if (seed_frame == tg.n_frames())
      throw InsufficientMarkers("trial " + std::to_string(k) + " has no frame with 4 valid markers");
    Eigen::VectorXd q = initial_pose(P, k, seed_frame, calib);
    solve_frame(P, k, seed_frame, calib, q, P.config.init_iterations);
    seq.poses[seed_frame] = q;
    for (std::size_t t = seed_frame + 1; t < tg.n_frames(); ++t)
    {
      solve_frame(P, k, t, calib, q, P.config.init_iterations);
      seq.poses[t] = q;
    }
    q = seq.poses[seed_frame];
    for (std::size_t t = seed_frame; t-- > 0;)
    {
      solve_frame(P, k, t, calib, q, P.config.init_iterations);
      seq.poses[t] = q;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

double total_cost(
    const Problem& P, const ModelCalibration& calib, const std::vector<PoseSequence>& poses)
{
  double sum = P.calibration_cost(calib);
  for (std::size_t k = 0; k < P.trials.size(); ++k)
    for (std::size_t t = 0; t < poses[k].size(); ++t)
    {
      const Eigen::VectorXd& q = poses[k].poses[t];
      sum += P.marker_cost(k, t, forward_kinematics(P.model, calib, q)) + P.joint_cost(q);
    }
  return sum;
}

/// Normal-equation blocks of one frame: pose-pose, pose-calibration, pose
/// gradient.
struct FrameBlock
{
  Eigen::MatrixXd Hpp;
  Eigen::MatrixXd Hpc;
  Eigen::VectorXd gp;
};

/// Damped Gauss-Newton steps on (S, O) together with every pose. Pose blocks
/// are eliminated frame by frame so only the calibration system is solved
/// densely. Returns the reciprocal condition of the undamped calibration
/// block at the first step.
double solve_calibration(
    const Problem& P, ModelCalibration& calib, std::vector<PoseSequence>& poses, int steps)
{
  const auto& model = P.model;
  const auto NB = static_cast<Eigen::Index>(model.n_bodies());
  const auto M = static_cast<Eigen::Index>(model.n_markers());
  const auto D = static_cast<Eigen::Index>(model.dof_count());
  const Eigen::Index n = NB + 3 * M;
  const bool hard = P.config.joint_limit_mode == JointLimitMode::Hard;
  double rcond = -1.0;
  double cost = total_cost(P, calib, poses);
  double mu = 1e-4;
  Eigen::Matrix3Xd X;
  for (int step = 0; step < steps; ++step)
  {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    std::vector<std::vector<FrameBlock>> blocks(P.trials.size());
    for (std::size_t k = 0; k < P.trials.size(); ++k)
    {
      const auto& tg = P.trials[k].targets;
      for (std::size_t t = 0; t < poses[k].size(); ++t)
      {
        const Eigen::VectorXd& q = poses[k].poses[t];
        const Kinematics kin = compute_kinematics(model, calib, q);
        const FkJacobian fk = fk_jacobian(model, calib, kin, &X);
        FrameBlock b{Eigen::MatrixXd::Zero(D, D), Eigen::MatrixXd::Zero(D, n),
                     Eigen::VectorXd::Zero(D)};
        for (std::size_t j = 0; j < tg.n_joints(); ++j)
        {
          const double w = P.weight(k, t, j);
          if (w <= 0.0)
            continue;
          const int m = P.marker_of[k][j];
          const Eigen::Vector3d e = X.col(m) - tg.at(t, j);
          const double we = P.irls(w, e.norm());
          const auto Jp = fk.pose.middleRows(3 * m, 3);
          const auto JS = fk.scale.middleRows(3 * m, 3);
          const Eigen::Matrix3d& JO = fk.offset[m];
          const Eigen::Index o = NB + 3 * m;
          b.Hpp.noalias() += we * Jp.transpose() * Jp;
          b.gp.noalias() += we * Jp.transpose() * e;
          b.Hpc.leftCols(NB).noalias() += we * Jp.transpose() * JS;
          b.Hpc.middleCols(o, 3).noalias() += we * Jp.transpose() * JO;
          H.topLeftCorner(NB, NB).noalias() += we * JS.transpose() * JS;
          H.block(0, o, NB, 3).noalias() += we * JS.transpose() * JO;
          H.block<3, 3>(o, o).noalias() += we * JO.transpose() * JO;
          g.head(NB).noalias() += we * JS.transpose() * e;
          g.segment<3>(o).noalias() += we * JO.transpose() * e;
        }
        if (!hard && P.config.alpha_joint > 0.0)
        {
          const Eigen::VectorXd excess = joint_limit_excess(model, q);
          for (Eigen::Index d = 0; d < D; ++d)
            if (excess[d] > 0.0)
            {
              b.Hpp(d, d) += P.config.alpha_joint;
              b.gp[d] += P.config.alpha_joint * (q[d] < model.dofs()[d].lower ? -excess[d] : excess[d]);
            }
        }
        blocks[k].push_back(std::move(b));
      }
    }
    for (Eigen::Index m = 0; m < M; ++m)
      H.block(NB + 3 * m, 0, 3, NB) = H.block(0, NB + 3 * m, NB, 3).transpose();
    if (P.config.alpha_anthro > 0.0)
    {
      const Eigen::ArrayXd l = calib.scales.array().log();
      const double c = std::sqrt(P.config.alpha_anthro / static_cast<double>(NB));
      const Eigen::VectorXd r = c * (l - l.mean()).matrix();
      Eigen::MatrixXd Jr = Eigen::MatrixXd::Identity(NB, NB)
                           - Eigen::MatrixXd::Constant(NB, NB, 1.0 / static_cast<double>(NB));
      Jr = c * Jr * calib.scales.cwiseInverse().asDiagonal();
      H.topLeftCorner(NB, NB).noalias() += Jr.transpose() * Jr;
      g.head(NB).noalias() += Jr.transpose() * r;
    }
    for (Eigen::Index m = 0; m < M; ++m)
    {
      const double a = P.offset_alpha(static_cast<int>(m));
      H.block<3, 3>(NB + 3 * m, NB + 3 * m).diagonal().array() += a;
      g.segment<3>(NB + 3 * m) += a * calib.offsets[m];
    }

    std::vector<Eigen::Index> active;
    const double max_diag = H.diagonal().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i)
      if (H(i, i) > 1e-14 * max_diag && H(i, i) > 0.0)
        active.push_back(i);
    const auto na = static_cast<Eigen::Index>(active.size());
    if (na == 0)
      break;
    auto restrict = [&](const Eigen::MatrixXd& A) {
      Eigen::MatrixXd out(na, na);
      for (Eigen::Index a = 0; a < na; ++a)
        for (Eigen::Index b = 0; b < na; ++b)
          out(a, b) = A(active[a], active[b]);
      return out;
    };
    if (rcond < 0.0)
    {
      const Eigen::VectorXd ev
          = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(restrict(H), Eigen::EigenvaluesOnly)
                .eigenvalues();
      rcond = ev.maxCoeff() > 0.0 ? std::max(ev.minCoeff(), 0.0) / ev.maxCoeff() : 0.0;
    }

    bool accepted = false;
    for (int attempt = 0; attempt < 12; ++attempt)
    {
      // Reduced calibration system after eliminating the damped pose blocks.
      Eigen::MatrixXd S = H;
      S.diagonal().array() += mu * (H.diagonal().array() + 1e-12);
      Eigen::VectorXd rhs = g;
      std::vector<std::vector<Eigen::LDLT<Eigen::MatrixXd>>> factors(P.trials.size());
      for (std::size_t k = 0; k < P.trials.size(); ++k)
        for (const auto& b : blocks[k])
        {
          Eigen::MatrixXd Hpp = b.Hpp;
          Hpp.diagonal().array() += mu * (b.Hpp.diagonal().array() + 1e-9);
          factors[k].emplace_back(Hpp);
          const Eigen::MatrixXd Y = factors[k].back().solve(b.Hpc);
          S.noalias() -= b.Hpc.transpose() * Y;
          rhs.noalias() -= Y.transpose() * b.gp;
        }
      Eigen::VectorXd ra(na);
      for (Eigen::Index a = 0; a < na; ++a)
        ra[a] = rhs[active[a]];
      const Eigen::VectorXd da = -restrict(S).ldlt().solve(ra);
      Eigen::VectorXd dc = Eigen::VectorXd::Zero(n);
      for (Eigen::Index a = 0; a < na; ++a)
        dc[active[a]] = da[a];

      ModelCalibration next = calib;
      next.scales += dc.head(NB);
      for (Eigen::Index m = 0; m < M; ++m)
        next.offsets[m] += dc.segment<3>(NB + 3 * m);
      std::vector<PoseSequence> next_poses = poses;
      bool finite = dc.allFinite();
      for (std::size_t k = 0; k < P.trials.size() && finite; ++k)
        for (std::size_t t = 0; t < blocks[k].size(); ++t)
        {
          const Eigen::VectorXd dp
              = -factors[k][t].solve(blocks[k][t].gp + blocks[k][t].Hpc * dc);
          Eigen::VectorXd& q = next_poses[k].poses[t];
          q += dp;
          if (hard)
            q = project_to_limits(model, q);
          finite = finite && q.allFinite();
        }
      if (!finite || next.scales.minCoeff() <= 0.05)
      {
        mu *= 4.0;
        continue;
      }
      const double cn = total_cost(P, next, next_poses);
      if (cn < cost)
      {
        const double drop = cost - cn;
        calib = std::move(next);
        poses = std::move(next_poses);
        cost = cn;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (drop <= 1e-14 * (1.0 + cost))
          return rcond;
        break;
      }
      mu *= 4.0;
    }
    if (!accepted)
      break;
  }
  return rcond < 0.0 ? 0.0 : rcond;
}

} // namespace

IKObjective ik_objective(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const std::vector<PoseSequence>& poses,
    const std::vector<IKTrial>& trials,
    const IKConfig& config)
{
  calib.validate(model, std::numeric_limits<double>::infinity());
  if (poses.size() != trials.size())
    throw ShapeMismatch("one pose sequence per trial is required");
  const Problem P(model, trials, config);
  IKObjective obj;
  for (std::size_t k = 0; k < trials.size(); ++k)
  {
    if (poses[k].size() != trials[k].targets.n_frames())
      throw ShapeMismatch("pose sequence length does not match its trial");
    for (std::size_t t = 0; t < poses[k].size(); ++t)
    {
      obj.marker += P.marker_cost(k, t, forward_kinematics(model, calib, poses[k].poses[t]));
      obj.joint += P.joint_cost(poses[k].poses[t]);
    }
  }
  obj.anthro = config.alpha_anthro * log_scale_variance(calib.scales);
  for (std::size_t m = 0; m < model.n_markers(); ++m)
    obj.offset += P.offset_alpha(static_cast<int>(m)) * calib.offsets[m].squaredNorm();
  obj.total = obj.marker + obj.joint + obj.anthro + obj.offset;
  return obj;
}

IKGradient ik_objective_gradient(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const std::vector<PoseSequence>& poses,
    const std::vector<IKTrial>& trials,
    const IKConfig& config)
{
  calib.validate(model, std::numeric_limits<double>::infinity());
  if (poses.size() != trials.size())
    throw ShapeMismatch("one pose sequence per trial is required");
  const Problem P(model, trials, config);
  const auto NB = static_cast<Eigen::Index>(model.n_bodies());
  const auto D = static_cast<Eigen::Index>(model.dof_count());
  const bool hard = config.joint_limit_mode == JointLimitMode::Hard;
  IKGradient grad;
  grad.scales = Eigen::VectorXd::Zero(NB);
  grad.offsets.assign(model.n_markers(), Eigen::Vector3d::Zero());
  Eigen::Matrix3Xd X;
  for (std::size_t k = 0; k < trials.size(); ++k)
  {
    if (poses[k].size() != trials[k].targets.n_frames())
      throw ShapeMismatch("pose sequence length does not match its trial");
    const auto& tg = trials[k].targets;
    auto& out = grad.poses.emplace_back();
    for (std::size_t t = 0; t < poses[k].size(); ++t)
    {
      const Eigen::VectorXd& q = poses[k].poses[t];
      const Kinematics kin = compute_kinematics(model, calib, q);
      const FkJacobian fk = fk_jacobian(model, calib, kin, &X);
      Eigen::VectorXd gp = Eigen::VectorXd::Zero(D);
      for (std::size_t j = 0; j < tg.n_joints(); ++j)
      {
        const double w = P.weight(k, t, j);
        if (w <= 0.0)
          continue;
        const int m = P.marker_of[k][j];
        const Eigen::Vector3d e = X.col(m) - tg.at(t, j);
        // d kernel / d x: 2e inside the quadratic zone, 2 delta e / r beyond it
        const Eigen::Vector3d de = 2.0 * P.irls(w, e.norm()) * e;
        gp.noalias() += fk.pose.middleRows(3 * m, 3).transpose() * de;
        grad.scales.noalias() += fk.scale.middleRows(3 * m, 3).transpose() * de;
        grad.offsets[m] += fk.offset[m].transpose() * de;
      }
      if (!hard)
      {
        const Eigen::VectorXd excess = joint_limit_excess(model, q);
        for (Eigen::Index d = 0; d < D; ++d)
          if (excess[d] > 0.0)
            gp[d] += 2.0 * config.alpha_joint
                     * (q[d] < model.dofs()[d].lower ? -excess[d] : excess[d]);
      }
      out.push_back(std::move(gp));
    }
  }
  if (NB > 0)
  {
    const Eigen::ArrayXd l = calib.scales.array().log();
    grad.scales.array() += config.alpha_anthro * 2.0 * (l - l.mean())
                           / (static_cast<double>(NB) * calib.scales.array());
  }
  for (std::size_t m = 0; m < model.n_markers(); ++m)
    grad.offsets[m] += 2.0 * P.offset_alpha(static_cast<int>(m)) * calib.offsets[m];
  return grad;
}

IKSolution solve_ik(
    const SkeletonModel& model, const std::vector<IKTrial>& trials, const IKConfig& config)
{
  config.validate();
  if (trials.empty())
    throw InsufficientMarkers("no IK trials given");
  const Problem P(model, trials, config);

  IKSolution sol;
  sol.calib = ModelCalibration::identity(model);
  sol.poses = initialize_poses(P, sol.calib);
  IKObjective obj = ik_objective(model, sol.calib, sol.poses, trials, config);
  sol.diagnostics.round_objective.push_back(obj.total);

  ModelCalibration calib = sol.calib;
  std::vector<PoseSequence> poses = sol.poses;
  double best = obj.total;
  bool rcond_set = false;
  for (int round = 0; round < config.outer_rounds; ++round)
  {
    if (config.solve_calibration && config.calib_iterations > 0)
    {
      const double rc = solve_calibration(P, calib, poses, config.calib_iterations);
      if (!rcond_set)
      {
        sol.diagnostics.calibration_rcond = rc;
        rcond_set = true;
      }
    }
    for (std::size_t k = 0; k < trials.size(); ++k)
      for (std::size_t t = 0; t < poses[k].size(); ++t)
        solve_frame(P, k, t, calib, poses[k].poses[t], config.pose_iterations);
    const IKObjective cur = ik_objective(model, calib, poses, trials, config);
    sol.diagnostics.round_objective.push_back(cur.total);
    sol.diagnostics.rounds_run = round + 1;
    if (!(cur.total < best))
    {
      sol.diagnostics.converged = true;
      break;
    }
    const double rel = (best - cur.total) / std::max(best, 1e-300);
    sol.calib = calib;
    sol.poses = poses;
    best = cur.total;
    if (rel < config.tolerance)
    {
      sol.diagnostics.converged = true;
      break;
    }
  }
  if (!sol.diagnostics.converged)
    sol.diagnostics.warnings.push_back(
        "objective still decreasing after " + std::to_string(config.outer_rounds) + " rounds");
  if (rcond_set && sol.diagnostics.calibration_rcond < kDegenerateRcond)
  {
    sol.diagnostics.degenerate = true;
    sol.diagnostics.warnings.push_back(
        "calibration is underdetermined: normal matrix reciprocal condition "
        + std::to_string(sol.diagnostics.calibration_rcond));
  }

  sol.diagnostics.objective = ik_objective(model, sol.calib, sol.poses, trials, config);
  for (std::size_t k = 0; k < trials.size(); ++k)
  {
    const auto& tg = trials[k].targets;
    std::vector<double> res(tg.n_frames(), 0.0);
    for (std::size_t t = 0; t < tg.n_frames(); ++t)
    {
      const Eigen::Matrix3Xd X = forward_kinematics(model, sol.calib, sol.poses[k].poses[t]);
      int n = 0;
      for (std::size_t j = 0; j < tg.n_joints(); ++j)
        if (tg.is_valid(t, j))
        {
          res[t] += (X.col(P.marker_of[k][j]) - tg.at(t, j)).norm();
          ++n;
        }
      if (n > 0)
        res[t] /= n;
    }
    sol.diagnostics.frame_residual.push_back(std::move(res));
  }
  return sol;
}

PointTrajectory predicted_markers(
    const SkeletonModel& model,
    const ModelCalibration& calib,
    const PoseSequence& poses,
    const std::vector<std::string>& names)
{
  std::vector<int> idx;
  for (const auto& n : names)
  {
    const int m = model.marker_index(n);
    if (m < 0)
      throw ShapeMismatch("'" + n + "' is not a model marker");
    idx.push_back(m);
  }
  PointTrajectory out(names, poses.timestamps);
  for (std::size_t t = 0; t < poses.size(); ++t)
  {
    const Eigen::Matrix3Xd X = forward_kinematics(model, calib, poses.poses[t]);
    for (std::size_t j = 0; j < idx.size(); ++j)
      out.set(t, j, X.col(idx[j]));
  }
  return out;
}

void save_ik_solution(
    const SkeletonModel& model, const IKSolution& solution, const std::filesystem::path& dir)
{
  save_calibration(model, solution.calib, dir / "calibration.json");
  for (std::size_t k = 0; k < solution.poses.size(); ++k)
  {
    const std::string name
        = solution.poses.size() == 1 ? "poses.csv" : "poses_" + std::to_string(k) + ".csv";
    save_pose_csv(solution.poses[k], dir / name);
  }
  const auto& d = solution.diagnostics;
  json_util::json doc;
  doc["objective"] = {
      {"total", d.objective.total},
      {"marker", d.objective.marker},
      {"joint", d.objective.joint},
      {"anthro", d.objective.anthro},
      {"offset", d.objective.offset},
  };
  doc["round_objective"] = d.round_objective;
  doc["rounds_run"] = d.rounds_run;
  doc["converged"] = d.converged;
  doc["degenerate"] = d.degenerate;
  doc["calibration_rcond"] = d.calibration_rcond;
  doc["frame_residual_m"] = d.frame_residual;
  doc["warnings"] = d.warnings;
  json_util::write_file(dir / "ik_diagnostics.json", doc);
}

} // namespace mocap
