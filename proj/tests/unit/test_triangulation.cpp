#include <algorithm>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "mocap/errors.hpp"
#include "mocap/synthetic.hpp"
#include "mocap/triangulation.hpp"

#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace mocap;

namespace {

std::vector<Ray> exact_rays(const CameraRig& rig, const Eigen::Vector3d& X)
{
  std::vector<Ray> rays;
  for (const auto& cam : rig.cameras)
    rays.push_back({&cam, project(cam, X), 1.0});
  return rays;
}

/// Homogeneous DLT: rows of x cross (P X) = 0 on undistorted normalized
/// coordinates, solved by SVD.
Eigen::Vector3d homogeneous_dlt(const std::vector<Ray>& rays)
{
  Eigen::MatrixXd A(2 * rays.size(), 4);
  for (std::size_t i = 0; i < rays.size(); ++i)
  {
    const Camera& cam = *rays[i].camera;
    Eigen::Matrix<double, 3, 4> P;
    P << cam.rotation, cam.translation;
    const Eigen::Vector2d n = undistort_normalized(
        cam, Eigen::Vector2d((rays[i].pixel.x() - cam.principal.x()) / cam.focal.x(),
                             (rays[i].pixel.y() - cam.principal.y()) / cam.focal.y()));
    A.row(2 * i) = n.x() * P.row(2) - P.row(0);
    A.row(2 * i + 1) = n.y() * P.row(2) - P.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  return h.head<3>() / h[3];
}

/// Stacked perpendicular-distance system (I - d d^T)(X - o) = 0 solved by QR.
Eigen::Vector3d stacked_midpoint(const std::vector<Ray>& rays)
{
  Eigen::MatrixXd A(3 * rays.size(), 3);
  Eigen::VectorXd b(3 * rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i)
  {
    const Camera& cam = *rays[i].camera;
    const Eigen::Vector2d n = pixel_to_normalized(cam, rays[i].pixel);
    const Eigen::Vector3d d = (cam.rotation.transpose() * Eigen::Vector3d(n.x(), n.y(), 1.0)).normalized();
    const Eigen::Matrix3d P = Eigen::Matrix3d::Identity() - d * d.transpose();
    A.block<3, 3>(3 * i, 0) = P;
    b.segment<3>(3 * i) = P * cam.center();
  }
  return A.colPivHouseholderQr().solve(b);
}

struct Scene
{
  CameraRig rig;
  ObservationSet obs;
  std::vector<Eigen::Vector3d> truth; // frame-major
};

Scene exact_scene(int cameras, std::size_t T, std::size_t J, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  Scene s;
  s.rig = oracle::ring_rig(cameras, 3.0, 0.05);
  std::vector<std::string> joints;
  for (std::size_t j = 0; j < J; ++j)
    joints.push_back("j" + std::to_string(j));
  std::vector<double> times;
  for (std::size_t t = 0; t < T; ++t)
    times.push_back(static_cast<double>(t) / 30.0);
  s.obs = ObservationSet(joints, s.rig.names(), times, "test");
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < J; ++j)
    {
      const Eigen::Vector3d X(u(rng), u(rng), 0.9 + u(rng));
      s.truth.push_back(X);
      for (std::size_t c = 0; c < s.rig.size(); ++c)
        s.obs.set(t, c, j, project(s.rig.cameras[c], X), 1.0);
    }
  return s;
}

} // namespace

TEST(Dlt, TwoExactViewsRecoverThePoint)
{
  const CameraRig rig = oracle::ring_rig(2, 3.0, 0.05);
  const Eigen::Vector3d X(1.0, 0.5, 1.2);
  const auto rays = exact_rays(rig, X);
  const DltResult r = triangulate_dlt(rays);
  EXPECT_LT((r.point - X).norm(), 1e-6);
  EXPECT_LT(r.residual_px, 1e-6);
}

TEST(Dlt, ZeroWeightOutlierMatchesCleanSubset)
{
  const CameraRig rig = oracle::ring_rig(4, 3.0, 0.02);
  const Eigen::Vector3d X(0.2, -0.3, 1.1);
  auto rays = exact_rays(rig, X);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 1.5);
  for (auto& r : rays)
    r.pixel += Eigen::Vector2d(noise(rng), noise(rng));
  const std::vector<Ray> clean(rays.begin() + 1, rays.end());
  rays[0].pixel += Eigen::Vector2d(50.0, 0.0);
  rays[0].weight = 0.0;
  EXPECT_LT((triangulate_dlt(rays).point - triangulate_dlt(clean).point).norm(), 1e-6);
}

TEST(Dlt, OneCameraIsInsufficient)
{
  const CameraRig rig = oracle::ring_rig(1);
  const auto rays = exact_rays(rig, Eigen::Vector3d(0.0, 0.0, 1.0));
  EXPECT_THROW(triangulate_dlt(rays), InsufficientViews);
}

TEST(Dlt, ParallelRaysAreDegenerate)
{
  const CameraRig rig = oracle::ring_rig(1);
  const Eigen::Vector2d px = project(rig.cameras[0], Eigen::Vector3d(0.1, 0.1, 1.0));
  const std::vector<Ray> rays{{&rig.cameras[0], px, 1.0}, {&rig.cameras[0], px, 1.0}};
  EXPECT_THROW(triangulate_dlt(rays), DegenerateGeometry);
}

TEST(Dlt, EqualWeightsMatchIndependentUnweightedOracles)
{
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::normal_distribution<double> noise(0.0, 2.0);
  const CameraRig rig = oracle::ring_rig(5, 3.0, 0.08);
  for (int i = 0; i < 50; ++i)
  {
    const Eigen::Vector3d X(u(rng), u(rng), 0.8 + u(rng));
    auto rays = exact_rays(rig, X);
    const double w = 0.1 + 0.9 * (u(rng) + 0.5);
    for (auto& r : rays)
      r.weight = w;
    const Eigen::Vector3d got = triangulate_dlt(rays).point;
    EXPECT_LT((got - homogeneous_dlt(rays)).norm(), 1e-9);

    for (auto& r : rays)
      r.pixel += Eigen::Vector2d(noise(rng), noise(rng));
    EXPECT_LT((triangulate_dlt(rays).point - stacked_midpoint(rays)).norm(), 1e-9);
  }
}

TEST(RobustWeights, ConsistentCamerasGetUnitWeight)
{
  const Scene s = exact_scene(5, 3, 4, 21);
  const WeightField w = robust_weights(s.obs, s.rig);
  for (double v : w.values)
    EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(RobustWeights, DisplacedCameraIsDownWeighted)
{
  Scene s = exact_scene(5, 3, 2, 22);
  s.obs.set(1, 2, 1, s.obs.pixel(1, 2, 1) + Eigen::Vector2d(200.0, 0.0), 1.0);
  const WeightField w = robust_weights(s.obs, s.rig);
  EXPECT_LT(w(1, 2, 1), 0.02);
  for (std::size_t c = 0; c < 5; ++c)
    if (c != 2)
    {
      EXPECT_GT(w(1, c, 1), 0.9);
    }
  // untouched cells keep full weight
  EXPECT_NEAR(w(0, 2, 1), 1.0, 1e-9);
  EXPECT_NEAR(w(1, 2, 0), 1.0, 1e-9);

  // leave-one-out hand check: the other four cameras agree exactly, so the
  // outlier's residual is its 200 px displacement
  EXPECT_LT(w(1, 2, 1), 1.0 / (1.0 + 100.0) + 1e-3);
}

TEST(RobustWeights, SingleConfidentCameraGivesZeroCell)
{
  Scene s = exact_scene(4, 1, 2, 23);
  for (std::size_t c = 1; c < 4; ++c)
    s.obs.set_absent(0, c, 0);
  const WeightField w = robust_weights(s.obs, s.rig);
  for (std::size_t c = 0; c < 4; ++c)
    EXPECT_EQ(w(0, c, 0), 0.0);
  const PointTrajectory traj = triangulate_with_weights(s.obs, s.rig, w);
  EXPECT_FALSE(traj.is_valid(0, 0));
  EXPECT_TRUE(traj.is_valid(0, 1));
}

TEST(RobustWeights, ZeroConfidenceGivesZeroWeight)
{
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene s = exact_scene(4, 4, 3, 24);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t j = 0; j < 3; ++j)
      {
        const double r = u(rng);
        if (r < 0.2)
          s.obs.set_confidence(t, c, j, 0.0);
        else if (r < 0.3)
          s.obs.set_absent(t, c, j);
        else
          s.obs.set_confidence(t, c, j, u(rng));
      }
  const WeightField w = robust_weights(s.obs, s.rig);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t j = 0; j < 3; ++j)
      {
        EXPECT_GE(w(t, c, j), 0.0);
        EXPECT_LE(w(t, c, j), 1.0);
        if (s.obs.confidence(t, c, j) == 0.0)
        {
          EXPECT_EQ(w(t, c, j), 0.0);
        }
      }
}

TEST(RobustWeights, LargerResidualNeverRaisesWeight)
{
  Scene s = exact_scene(6, 1, 1, 25);
  const Eigen::Vector2d base = s.obs.pixel(0, 3, 0);
  double prev = 2.0;
  for (double shift = 0.0; shift <= 300.0; shift += 5.0)
  {
    s.obs.set(0, 3, 0, base + Eigen::Vector2d(0.6 * shift, -0.8 * shift), 1.0);
    const double w = robust_weights(s.obs, s.rig)(0, 3, 0);
    EXPECT_LE(w, prev + 1e-12);
    prev = w;
  }
}

TEST(RobustTriangulation, NoiselessSceneIsExact)
{
  const Scene s = exact_scene(6, 10, 5, 26);
  const auto out = robust_triangulate_trajectory(s.obs, s.rig);
  double worst = 0.0;
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t j = 0; j < 5; ++j)
    {
      ASSERT_TRUE(out.trajectory.is_valid(t, j));
      worst = std::max(worst, (out.trajectory.at(t, j) - s.truth[t * 5 + j]).norm());
    }
  EXPECT_LT(worst, 1e-5);
}

TEST(RobustTriangulation, TwoPixelNoiseOnStandardRig)
{
  const CameraRig rig = make_rig(RigSpec{});
  std::mt19937_64 rng(27);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::normal_distribution<double> noise(0.0, 2.0);
  const std::size_t T = 30, J = 10;
  std::vector<std::string> joints;
  for (std::size_t j = 0; j < J; ++j)
    joints.push_back("j" + std::to_string(j));
  std::vector<double> times;
  for (std::size_t t = 0; t < T; ++t)
    times.push_back(static_cast<double>(t) / 30.0);
  ObservationSet obs(joints, rig.names(), times, "test");
  std::vector<Eigen::Vector3d> truth;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < J; ++j)
    {
      const Eigen::Vector3d X(u(rng), u(rng), 1.0 + 2.0 * u(rng));
      truth.push_back(X);
      for (std::size_t c = 0; c < rig.size(); ++c)
        obs.set(t, c, j, project(rig.cameras[c], X) + Eigen::Vector2d(noise(rng), noise(rng)), 1.0);
    }
  const auto out = robust_triangulate_trajectory(obs, rig);
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    sum += (out.trajectory.points[i] - truth[i]).norm();
  EXPECT_LT(sum / static_cast<double>(truth.size()), 0.010);
}

TEST(RobustTriangulation, FramePermutationCommutes)
{
  Scene s = exact_scene(4, 6, 3, 28);
  std::mt19937_64 rng(29);
  std::normal_distribution<double> noise(0.0, 5.0);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t j = 0; j < 3; ++j)
        s.obs.set(t, c, j, s.obs.pixel(t, c, j) + Eigen::Vector2d(noise(rng), noise(rng)), 0.9);
  s.obs.set_absent(2, 1, 1);

  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> times;
  for (std::size_t t = 0; t < 6; ++t)
    times.push_back(static_cast<double>(t));
  ObservationSet shuffled(s.obs.joint_names(), s.obs.camera_names(), times, "test");
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t j = 0; j < 3; ++j)
        if (s.obs.present(perm[t], c, j))
          shuffled.set(t, c, j, s.obs.pixel(perm[t], c, j), s.obs.confidence(perm[t], c, j));

  const auto a = robust_triangulate_trajectory(s.obs, s.rig);
  const auto b = robust_triangulate_trajectory(shuffled, s.rig);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t j = 0; j < 3; ++j)
    {
      EXPECT_EQ(b.trajectory.at(t, j), a.trajectory.at(perm[t], j));
      for (std::size_t c = 0; c < 4; ++c)
        EXPECT_EQ(b.weights(t, c, j), a.weights(perm[t], c, j));
    }
}

TEST(TrajectoryFile, RoundTripWithWeights)
{
  Scene s = exact_scene(3, 3, 2, 30);
  s.obs.set_absent(1, 0, 0);
  s.obs.set_absent(1, 1, 0);
  const auto out = robust_triangulate_trajectory(s.obs, s.rig);
  ASSERT_FALSE(out.trajectory.is_valid(1, 0));
  const auto path = scratch_dir() / "traj.json";
  const auto names = s.rig.names();
  save_trajectory(out.trajectory, path, &out.weights, &names);
  const LoadedTrajectory loaded = load_trajectory(path);
  EXPECT_EQ(loaded.trajectory, out.trajectory);
  ASSERT_TRUE(loaded.weights.has_value());
  EXPECT_EQ(*loaded.weights, out.weights);
  EXPECT_EQ(loaded.camera_names, names);
}

TEST(PointWeights, MeanOverCameras)
{
  WeightField w(1, 4, 2);
  w(0, 0, 0) = 1.0;
  w(0, 1, 0) = 0.5;
  w(0, 3, 1) = 0.2;
  const auto pw = point_weights(w);
  EXPECT_DOUBLE_EQ(pw[0], 0.375);
  EXPECT_DOUBLE_EQ(pw[1], 0.05);
}
