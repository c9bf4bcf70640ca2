#include "mocap/implicit_trajectory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "mocap/errors.hpp"
#include "mocap/json_util.hpp"

namespace mocap {

using json_util::json;

Encoding positional_encoding(double t, double t0, double t1, int frequencies)
{
  Encoding e;
  e.values.resize(2 * frequencies);
  e.extrapolated = t < t0 || t > t1;
  const double s = std::numbers::pi * (t - t0) / (t1 - t0);
  for (int k = 0; k < frequencies; ++k)
  {
    const double a = std::ldexp(s, k);
    e.values[2 * k] = std::sin(a);
    e.values[2 * k + 1] = std::cos(a);
  }
  return e;
}

Eigen::MatrixXd encode_times(const std::vector<double>& times, double t0, double t1, int frequencies)
{
  Eigen::MatrixXd out(2 * frequencies, static_cast<Eigen::Index>(times.size()));
  for (std::size_t k = 0; k < times.size(); ++k)
    out.col(static_cast<Eigen::Index>(k)) = positional_encoding(times[k], t0, t1, frequencies).values;
  return out;
}

//==============================================================================
ImplicitTrajectory::ImplicitTrajectory(
    std::vector<std::string> joints, double start, double end, int frequencies)
  : joint_names(std::move(joints)),
    t0(start),
    t1(end),
    pe_frequencies(frequencies),
    network(2 * frequencies, 3 * static_cast<int>(joint_names.size()), kHiddenWidths)
{
  if (!(t1 > t0))
    throw ValidationError("trajectory time span must be positive");
}

Eigen::MatrixXd ImplicitTrajectory::forward_batch(const std::vector<double>& times) const
{
  const Eigen::MatrixXf enc = encode_times(times, t0, t1, pe_frequencies).cast<float>();
  return network.forward(enc).cast<double>();
}

Eigen::Matrix3Xd ImplicitTrajectory::forward(double t) const
{
  const Eigen::MatrixXd out = forward_batch({t});
  return Eigen::Map<const Eigen::Matrix3Xd>(out.data(), 3, static_cast<Eigen::Index>(n_joints()));
}

PointTrajectory ImplicitTrajectory::sample(const std::vector<double>& times) const
{
  PointTrajectory traj(joint_names, times);
  const Eigen::MatrixXd out = forward_batch(times);
  for (std::size_t t = 0; t < times.size(); ++t)
    for (std::size_t j = 0; j < n_joints(); ++j)
      traj.set(t, j, out.block<3, 1>(3 * static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)));
  return traj;
}

//==============================================================================
double huber_g(double r, const HuberParams& p)
{
  if (r <= p.knee1)
    return 0.5 * r * r;
  if (r <= p.knee2)
    return p.knee1 * r - 0.5 * p.knee1 * p.knee1;
  const double at_knee2 = p.knee1 * p.knee2 - 0.5 * p.knee1 * p.knee1;
  return at_knee2 + p.tail_slope * p.knee1 * (r - p.knee2);
}

double huber_g_derivative(double r, const HuberParams& p)
{
  if (r <= p.knee1)
    return r;
  if (r <= p.knee2)
    return p.knee1;
  return p.tail_slope * p.knee1;
}

ReprojectionTargets::ReprojectionTargets(
    const ObservationSet& obs, const CameraRig& rig, const WeightField& weights)
  : mRig(&rig), mCameras(obs.n_cameras()), mJoints(obs.n_joints()), mFrames(obs.n_frames())
{
  check_camera_alignment(obs, rig);
  if (weights.n_frames != obs.n_frames() || weights.n_cameras != obs.n_cameras()
      || weights.n_joints != obs.n_joints())
    throw ShapeMismatch("weight field does not match observations");
  for (std::size_t t = 0; t < obs.n_frames(); ++t)
    for (std::size_t c = 0; c < obs.n_cameras(); ++c)
      for (std::size_t j = 0; j < obs.n_joints(); ++j)
        if (obs.present(t, c, j) && weights(t, c, j) > 0.0)
          mFrames[t].push_back(
              {static_cast<int>(c), static_cast<int>(j), obs.pixel(t, c, j), weights(t, c, j)});
}

LossTerm reprojection_term(
    const Eigen::MatrixXd& outputs,
    const std::vector<std::size_t>& frames,
    const ReprojectionTargets& targets,
    const HuberParams& huber)
{
  LossTerm out;
  out.gradient = Eigen::MatrixXd::Zero(outputs.rows(), outputs.cols());
  const double norm = static_cast<double>(frames.size() * targets.n_joints() * targets.n_cameras());
  if (norm == 0.0)
    return out;
  Eigen::Vector2d px;
  Eigen::Matrix<double, 2, 3> J;
  for (std::size_t k = 0; k < frames.size(); ++k)
  {
    const auto col = static_cast<Eigen::Index>(k);
    for (const auto& e : targets.frame(frames[k]))
    {
      const Eigen::Vector3d x = outputs.block<3, 1>(3 * e.joint, col);
      if (!project_with_jacobian(targets.rig().cameras[e.camera], x, px, &J))
      {
        out.value += e.weight * kBehindCameraPenalty;
        continue;
      }
      const Eigen::Vector2d d = px - e.pixel;
      const double r = d.norm();
      out.value += e.weight * huber_g(r, huber);
      if (r > 0.0)
        out.gradient.block<3, 1>(3 * e.joint, col)
            += (e.weight * huber_g_derivative(r, huber) / (r * norm)) * (J.transpose() * d);
    }
  }
  out.value /= norm;
  return out;
}

LossTerm smooth_term(const Eigen::MatrixXd& outputs)
{
  LossTerm out;
  out.gradient = Eigen::MatrixXd::Zero(outputs.rows(), outputs.cols());
  const Eigen::Index B = outputs.cols();
  if (B < 3 || outputs.rows() == 0)
    return out;
  const double norm = static_cast<double>((B - 2) * outputs.rows());
  for (Eigen::Index k = 1; k + 1 < B; ++k)
  {
    const Eigen::VectorXd d = outputs.col(k + 1) - 2.0 * outputs.col(k) + outputs.col(k - 1);
    out.value += d.squaredNorm();
    const Eigen::VectorXd g = (2.0 / norm) * d;
    out.gradient.col(k + 1) += g;
    out.gradient.col(k) -= 2.0 * g;
    out.gradient.col(k - 1) += g;
  }
  out.value /= norm;
  return out;
}

LossTerm skeleton_term(const Eigen::MatrixXd& outputs, const std::vector<std::pair<int, int>>& edges)
{
  LossTerm out;
  out.gradient = Eigen::MatrixXd::Zero(outputs.rows(), outputs.cols());
  const Eigen::Index B = outputs.cols();
  if (edges.empty() || B == 0)
    return out;
  const double E = static_cast<double>(edges.size());
  Eigen::VectorXd len(B);
  for (const auto& [a, b] : edges)
  {
    for (Eigen::Index k = 0; k < B; ++k)
      len[k] = (outputs.block<3, 1>(3 * a, k) - outputs.block<3, 1>(3 * b, k)).norm();
    const double mean = len.mean();
    const Eigen::VectorXd dev = len.array() - mean;
    out.value += dev.squaredNorm() / static_cast<double>(B);
    for (Eigen::Index k = 0; k < B; ++k)
    {
      if (!(len[k] > 0.0))
        continue;
      const Eigen::Vector3d u
          = (outputs.block<3, 1>(3 * a, k) - outputs.block<3, 1>(3 * b, k)) / len[k];
      const double g = 2.0 * dev[k] / (static_cast<double>(B) * E);
      out.gradient.block<3, 1>(3 * a, k) += g * u;
      out.gradient.block<3, 1>(3 * b, k) -= g * u;
    }
  }
  out.value /= E;
  return out;
}

double loss_reprojection(
    const ImplicitTrajectory& model,
    const ObservationSet& obs,
    const CameraRig& rig,
    const WeightField& weights,
    const std::vector<std::size_t>& frames,
    const HuberParams& huber)
{
  const ReprojectionTargets targets(obs, rig, weights);
  std::vector<double> times;
  for (auto t : frames)
    times.push_back(obs.timestamps().at(t));
  return reprojection_term(model.forward_batch(times), frames, targets, huber).value;
}

double loss_smooth(const ImplicitTrajectory& model, const std::vector<double>& grid)
{
  return smooth_term(model.forward_batch(grid)).value;
}

double loss_skeleton(
    const ImplicitTrajectory& model,
    const std::vector<std::pair<int, int>>& edges,
    const std::vector<double>& grid)
{
  return skeleton_term(model.forward_batch(grid), edges).value;
}

//==============================================================================
void FitConfig::validate() const
{
  if (!(lambda_smooth >= 0.0) || !(lambda_skeleton >= 0.0))
    throw ConfigError("loss weights must be non-negative");
  if (!(huber.knee1 > 0.0) || !(huber.knee2 > huber.knee1))
    throw ConfigError("huber knees must satisfy 0 < knee1 < knee2");
  if (!(huber.tail_slope >= 0.0))
    throw ConfigError("huber tail slope must be non-negative");
  if (iterations < 1 || batch_size < 1 || eval_every < 1)
    throw ConfigError("iterations, batch_size and eval_every must be positive");
  if (!(peak_learning_rate > 0.0))
    throw ConfigError("learning rate must be positive");
  if (pe_frequencies < 1)
    throw ConfigError("pe_frequencies must be positive");
}

LossBreakdown full_loss(
    const ImplicitTrajectory& model,
    const ObservationSet& obs,
    const ReprojectionTargets& targets,
    const FitConfig& config)
{
  const auto& times = obs.timestamps();
  const Eigen::MatrixXd outputs = model.forward_batch(times);
  std::vector<std::size_t> frames(times.size());
  for (std::size_t t = 0; t < frames.size(); ++t)
    frames[t] = t;
  LossBreakdown b;
  b.reprojection = reprojection_term(outputs, frames, targets, config.huber).value;
  b.smooth = smooth_term(outputs).value;
  b.skeleton = skeleton_term(outputs, config.bone_edges).value;
  b.total = b.reprojection + config.lambda_smooth * b.smooth + config.lambda_skeleton * b.skeleton;
  return b;
}

namespace {

/// Per-joint mean of the weighted triangulation, used as the initial output.
Eigen::VectorXf initial_center(const ObservationSet& obs, const CameraRig& rig, const WeightField& weights)
{
  const PointTrajectory tri = triangulate_with_weights(obs, rig, weights);
  const std::size_t J = obs.n_joints();
  Eigen::VectorXd center = Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(J));
  Eigen::Vector3d overall = Eigen::Vector3d::Zero();
  std::size_t overall_n = 0;
  std::vector<std::size_t> counts(J, 0);
  for (std::size_t t = 0; t < tri.n_frames(); ++t)
    for (std::size_t j = 0; j < J; ++j)
      if (tri.is_valid(t, j))
      {
        center.segment<3>(3 * static_cast<Eigen::Index>(j)) += tri.at(t, j);
        overall += tri.at(t, j);
        ++counts[j];
        ++overall_n;
      }
  if (overall_n == 0)
    throw InsufficientViews("no frame has two confident cameras");
  overall /= static_cast<double>(overall_n);
  for (std::size_t j = 0; j < J; ++j)
  {
    auto seg = center.segment<3>(3 * static_cast<Eigen::Index>(j));
    if (counts[j] > 0)
      seg /= static_cast<double>(counts[j]);
    else
      seg = overall;
  }
  return center.cast<float>();
}

} // namespace

FitResult fit_trajectory(
    const ObservationSet& obs,
    const CameraRig& rig,
    const WeightField& weights,
    const FitConfig& config)
{
  config.validate();
  const std::size_t T = obs.n_frames();
  if (T < 2)
    throw InsufficientViews("trajectory fitting needs at least 2 frames");
  const auto& times = obs.timestamps();
  const ReprojectionTargets targets(obs, rig, weights);
  for (const auto& [a, b] : config.bone_edges)
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= obs.n_joints()
        || static_cast<std::size_t>(b) >= obs.n_joints())
      throw ShapeMismatch("bone edge refers to a joint outside the observations");

  FitResult result;
  result.model = ImplicitTrajectory(obs.joint_names(), times.front(), times.back(), config.pe_frequencies);
  auto& net = result.model.network;
  const Eigen::VectorXf center = initial_center(obs, rig, weights);
  net.initialize(config.seed, config.output_init_scale, &center);

  const Eigen::MatrixXf all_encodings
      = encode_times(times, result.model.t0, result.model.t1, config.pe_frequencies).cast<float>();

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t window = std::min<std::size_t>(T, static_cast<std::size_t>(config.batch_size));
  // Clamped starts give edge frames the same coverage as interior ones.
  const auto last_start = static_cast<std::int64_t>(T - window);
  std::uniform_int_distribution<std::int64_t> start_dist(
      1 - static_cast<std::int64_t>(window), static_cast<std::int64_t>(T) - 1);

  Eigen::VectorXf m = Eigen::VectorXf::Zero(net.params.size());
  Eigen::VectorXf v = Eigen::VectorXf::Zero(net.params.size());
  const float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
  float beta1_pow = 1.0f, beta2_pow = 1.0f;

  Eigen::VectorXf best = net.params;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_iter = -1;

  ImplicitNetwork<float>::Cache cache;
  std::vector<std::size_t> frames(window);

  auto evaluate = [&](int iter) {
    const LossBreakdown b = full_loss(result.model, obs, targets, config);
    if (!std::isfinite(b.total))
      throw DivergenceDetected("full-batch loss is not finite at iteration " + std::to_string(iter));
    result.report.loss_curve.emplace_back(iter, b.total);
    if (b.total < best_loss)
    {
      best_loss = b.total;
      best = net.params;
      best_iter = iter;
    }
  };

  for (int it = 0; it < config.iterations; ++it)
  {
    if (it % config.eval_every == 0)
      evaluate(it);

    const auto start
        = static_cast<std::size_t>(std::clamp<std::int64_t>(start_dist(rng), 0, last_start));
    for (std::size_t k = 0; k < window; ++k)
      frames[k] = start + k;
    const Eigen::MatrixXf enc = all_encodings.middleCols(static_cast<Eigen::Index>(start),
                                                         static_cast<Eigen::Index>(window));
    const Eigen::MatrixXd outputs = net.forward(enc, &cache).cast<double>();
    const LossTerm rep = reprojection_term(outputs, frames, targets, config.huber);
    const LossTerm smo = smooth_term(outputs);
    const LossTerm ske = skeleton_term(outputs, config.bone_edges);
    const double loss = rep.value + config.lambda_smooth * smo.value
                        + config.lambda_skeleton * ske.value;
    if (!std::isfinite(loss))
      throw DivergenceDetected("mini-batch loss is not finite at iteration " + std::to_string(it));
    const Eigen::MatrixXf grad_out
        = (rep.gradient + config.lambda_smooth * smo.gradient
           + config.lambda_skeleton * ske.gradient)
              .cast<float>();
    const Eigen::VectorXf grad = net.backward(cache, grad_out);

    double lr = config.peak_learning_rate;
    if (it < config.warmup_iterations)
      lr *= static_cast<double>(it + 1) / static_cast<double>(config.warmup_iterations);
    else
    {
      const double span = std::max(1, config.iterations - config.warmup_iterations);
      const double progress = static_cast<double>(it - config.warmup_iterations) / span;
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    beta1_pow *= beta1;
    beta2_pow *= beta2;
    const float step = static_cast<float>(lr * std::sqrt(1.0 - beta2_pow) / (1.0 - beta1_pow));
    m = beta1 * m + (1.0f - beta1) * grad;
    v = beta2 * v + (1.0f - beta2) * grad.cwiseAbs2();
    net.params.array() -= step * m.array() / (v.array().sqrt() + eps);
  }
  evaluate(config.iterations);

  net.params = best;
  const LossBreakdown final_terms = full_loss(result.model, obs, targets, config);
  result.report.best_iteration = best_iter;
  result.report.best_loss = best_loss;
  result.report.final_reprojection = final_terms.reprojection;
  result.report.final_smooth = final_terms.smooth;
  result.report.final_skeleton = final_terms.skeleton;
  return result;
}

//==============================================================================
void save_implicit(
    const ImplicitTrajectory& model, const FitReport* report, const std::filesystem::path& path)
{
  static_assert(std::endian::native == std::endian::little, "parameter files are little-endian");
  const std::filesystem::path bin = path.parent_path() / (path.stem().string() + ".params.bin");
  json doc;
  doc["architecture"] = {
      {"hidden", model.network.hidden()},
      {"pe_frequencies", model.pe_frequencies},
      {"output_dim", model.network.output_dim()},
      {"layer_norm_epsilon", kLayerNormEpsilon},
  };
  doc["joint_names"] = model.joint_names;
  doc["time_span"] = {model.t0, model.t1};
  doc["parameter_count"] = model.network.parameter_count();
  doc["parameter_file"] = bin.filename().string();
  if (report)
  {
    json curve = json::array();
    for (const auto& [it, loss] : report->loss_curve)
      curve.push_back({it, loss});
    doc["report"] = {
        {"loss_curve", curve},
        {"best_iteration", report->best_iteration},
        {"best_loss", report->best_loss},
        {"final_terms",
         {{"reprojection", report->final_reprojection},
          {"smooth", report->final_smooth},
          {"skeleton", report->final_skeleton}}},
    };
  }
  json_util::write_file(path, doc);
  std::ofstream out(bin, std::ios::binary);
  if (!out)
    throw ParseError("cannot write '" + bin.string() + "'");
  out.write(
      reinterpret_cast<const char*>(model.network.params.data()),
      static_cast<std::streamsize>(model.network.parameter_count() * sizeof(float)));
}

ImplicitTrajectory load_implicit(const std::filesystem::path& path)
{
  const json doc = json_util::read_file(path);
  const std::string ctx = path.string();
  const json& arch = json_util::field(doc, "architecture", ctx);
  const auto hidden = json_util::get<std::vector<int>>(arch, "hidden", ctx);
  if (hidden != kHiddenWidths)
    throw ValidationError(ctx + ": unsupported hidden layer widths");
  const int K = json_util::get<int>(arch, "pe_frequencies", ctx);
  const auto span = json_util::get<std::vector<double>>(doc, "time_span", ctx);
  if (span.size() != 2)
    throw ParseError(ctx + ": time_span must be [t0, t1]");
  ImplicitTrajectory model(
      json_util::get<std::vector<std::string>>(doc, "joint_names", ctx), span[0], span[1], K);
  const auto count = json_util::get<std::size_t>(doc, "parameter_count", ctx);
  if (count != model.network.parameter_count())
    throw ParseError(ctx + ": parameter_count does not match the architecture");
  const auto bin = path.parent_path() / json_util::get<std::string>(doc, "parameter_file", ctx);
  std::ifstream in(bin, std::ios::binary);
  if (!in)
    throw ParseError("cannot open '" + bin.string() + "'");
  in.read(reinterpret_cast<char*>(model.network.params.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
    throw ParseError(bin.string() + ": truncated parameter file");
  return model;
}

} // namespace mocap
