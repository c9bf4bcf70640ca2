#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "mocap/errors.hpp"
#include "mocap/observations.hpp"

#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace mocap;

namespace {

ObservationSet random_observations(std::mt19937_64& rng, const CameraRig& rig, std::size_t T, std::size_t J)
{
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::string> joints;
  for (std::size_t j = 0; j < J; ++j)
    joints.push_back("joint_" + std::to_string(j));
  std::vector<double> times;
  for (std::size_t t = 0; t < T; ++t)
    times.push_back(0.1 + static_cast<double>(t) / 30.0);
  ObservationSet obs(joints, rig.names(), times, "dense-87");
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < rig.size(); ++c)
      for (std::size_t j = 0; j < J; ++j)
        if (u(rng) < 0.85)
          obs.set(t, c, j, {u(rng) * 1400.0 - 60.0, u(rng) * 800.0 - 40.0}, u(rng));
  return obs;
}

} // namespace

TEST(StdToConfidence, HalfMaximumAt200)
{
  EXPECT_DOUBLE_EQ(std_to_confidence(200.0), 0.5);
}

TEST(StdToConfidence, LogisticValues)
{
  EXPECT_NEAR(std_to_confidence(0.0), 1.0 / (1.0 + std::exp(-4.0)), 1e-15);
  EXPECT_NEAR(std_to_confidence(0.0), 0.982, 5e-4);
  EXPECT_NEAR(std_to_confidence(250.0), 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(std_to_confidence(250.0), 0.269, 5e-4);
}

TEST(StdToConfidence, StrictlyDecreasingAndBounded)
{
  double prev = std_to_confidence(0.0);
  for (double s = 1.0; s <= 800.0; s += 1.0)
  {
    const double c = std_to_confidence(s);
    EXPECT_LT(c, prev);
    EXPECT_GT(c, 0.0);
    EXPECT_LT(c, 1.0);
    prev = c;
  }
}

TEST(Gating, OutOfImagePixelIsZeroed)
{
  const CameraRig rig = oracle::ring_rig(1);
  ObservationSet obs({"a"}, rig.names(), {0.0}, "x");
  obs.set(0, 0, 0, {-5.0, 100.0}, 0.9);
  const ObservationSet gated = gate_observations(obs, rig, 0.3);
  EXPECT_EQ(gated.confidence(0, 0, 0), 0.0);
  EXPECT_TRUE(gated.present(0, 0, 0));
  EXPECT_EQ(gated.pixel(0, 0, 0), obs.pixel(0, 0, 0));
}

TEST(Gating, InBoundsConfidentSetIsUnchanged)
{
  const CameraRig rig = oracle::ring_rig(2);
  ObservationSet obs({"a", "b"}, rig.names(), {0.0, 0.5}, "x");
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < 2; ++j)
        obs.set(t, c, j, {10.0 + 100.0 * t, 700.0 - 50.0 * j}, 0.3 + 0.2 * c);
  EXPECT_EQ(gate_observations(obs, rig, 0.3), obs);
}

TEST(Gating, ZeroesExactlyTheOutOfBoundsCells)
{
  const CameraRig rig = oracle::ring_rig(2);
  ObservationSet obs({"a", "b", "c"}, rig.names(), {0.0, 0.1}, "x");
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < 3; ++j)
        obs.set(t, c, j, {300.0, 200.0}, 0.8);
  obs.set(0, 1, 2, {1280.0, 200.0}, 0.8);
  obs.set(1, 0, 0, {300.0, -0.001}, 0.8);
  obs.set(1, 1, 1, {300.0, 720.5}, 0.8);
  const ObservationSet gated = gate_observations(obs, rig, 0.3);

  int zeroed = 0;
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < 3; ++j)
      {
        const auto& px = obs.pixel(t, c, j);
        const bool inside = px.x() >= 0.0 && px.x() < 1280.0 && px.y() >= 0.0 && px.y() < 720.0;
        EXPECT_EQ(gated.confidence(t, c, j), inside ? 0.8 : 0.0);
        zeroed += inside ? 0 : 1;
      }
  EXPECT_EQ(zeroed, 3);
}

TEST(Gating, LowConfidenceIsZeroed)
{
  const CameraRig rig = oracle::ring_rig(1);
  ObservationSet obs({"a", "b"}, rig.names(), {0.0}, "x");
  obs.set(0, 0, 0, {100.0, 100.0}, 0.29);
  obs.set(0, 0, 1, {100.0, 100.0}, 0.3);
  const ObservationSet gated = gate_observations(obs, rig, 0.3);
  EXPECT_EQ(gated.confidence(0, 0, 0), 0.0);
  EXPECT_EQ(gated.confidence(0, 0, 1), 0.3);
}

TEST(Gating, IsIdempotent)
{
  std::mt19937_64 rng(11);
  const CameraRig rig = oracle::ring_rig(3);
  for (int trial = 0; trial < 20; ++trial)
  {
    const ObservationSet obs = random_observations(rng, rig, 4, 5);
    const ObservationSet once = gate_observations(obs, rig);
    EXPECT_EQ(gate_observations(once, rig), once);
  }
}

TEST(Gating, CameraNameMismatchThrows)
{
  const CameraRig rig = oracle::ring_rig(2);
  ObservationSet obs({"a"}, {"c1", "c0"}, {0.0}, "x");
  EXPECT_THROW(gate_observations(obs, rig), CameraMismatch);
}

TEST(ObservationFile, RoundTripIsLossless)
{
  std::mt19937_64 rng(12);
  const CameraRig rig = oracle::ring_rig(3);
  const ObservationSet obs = random_observations(rng, rig, 5, 4);
  const auto path = scratch_dir() / "obs.jsonl";
  save_observations(obs, path);
  EXPECT_EQ(load_observations(path), obs);
}

TEST(ObservationFile, MissingCameraRecordMeansAllAbsent)
{
  const auto path = scratch_dir() / "obs.jsonl";
  std::ofstream(path)
      << R"({"schema_version":1,"joint_names":["a","b"],"keypoint_set_label":"x","timestamps":[0.0,0.1]})" "\n"
      << R"({"t_index":0,"camera":"left","kp":[[1,2,0.5],[3,4,0.6]]})" "\n"
      << R"({"t_index":0,"camera":"right","kp":[[5,6,0.7],null]})" "\n"
      << R"({"t_index":1,"camera":"left","kp":[[7,8,0.8],[9,10,0.9]]})" "\n";
  const ObservationSet obs = load_observations(path);
  ASSERT_EQ(obs.n_frames(), 2u);
  ASSERT_EQ(obs.camera_names(), (std::vector<std::string>{"left", "right"}));
  EXPECT_TRUE(obs.present(1, 0, 1));
  EXPECT_FALSE(obs.present(0, 1, 1));
  for (std::size_t j = 0; j < 2; ++j)
  {
    EXPECT_FALSE(obs.present(1, 1, j));
    EXPECT_EQ(obs.confidence(1, 1, j), 0.0);
  }
}

TEST(ObservationFile, UnknownSchemaVersionThrows)
{
  const auto path = scratch_dir() / "obs.jsonl";
  std::ofstream(path)
      << R"({"schema_version":7,"joint_names":["a"],"keypoint_set_label":"x","timestamps":[0.0]})" "\n";
  EXPECT_THROW(load_observations(path), SchemaVersionError);
}

TEST(ObservationFile, MalformedRecordsGiveParseErrors)
{
  const auto dir = scratch_dir();
  const std::string header =
      R"({"schema_version":1,"joint_names":["a"],"keypoint_set_label":"x","timestamps":[0.0,0.1]})" "\n";
  std::ofstream(dir / "range.jsonl") << header << R"({"t_index":2,"camera":"c","kp":[null]})" "\n";
  EXPECT_THROW(load_observations(dir / "range.jsonl"), ParseError);
  std::ofstream(dir / "conf.jsonl") << header << R"({"t_index":0,"camera":"c","kp":[[1,2,1.5]]})" "\n";
  EXPECT_THROW(load_observations(dir / "conf.jsonl"), ParseError);
  std::ofstream(dir / "width.jsonl") << header << R"({"t_index":0,"camera":"c","kp":[null,null]})" "\n";
  EXPECT_THROW(load_observations(dir / "width.jsonl"), ParseError);
  std::ofstream(dir / "times.jsonl")
      << R"({"schema_version":1,"joint_names":["a"],"keypoint_set_label":"x","timestamps":[0.1,0.1]})" "\n";
  EXPECT_THROW(load_observations(dir / "times.jsonl"), ParseError);
}

TEST(ObservationSetInvariants, AbsentCellsCarryZeroConfidence)
{
  std::mt19937_64 rng(13);
  const CameraRig rig = oracle::ring_rig(2);
  ObservationSet obs = random_observations(rng, rig, 3, 3);
  obs.set_absent(1, 1, 1);
  EXPECT_EQ(obs.confidence(1, 1, 1), 0.0);
  EXPECT_NO_THROW(obs.validate());
  obs.set(0, 0, 0, {1.0, 1.0}, 4.0);
  EXPECT_EQ(obs.confidence(0, 0, 0), 1.0);
}

TEST(ObservationSetInvariants, SelectJointsKeepsRequestedOrder)
{
  std::mt19937_64 rng(14);
  const CameraRig rig = oracle::ring_rig(2);
  const ObservationSet obs = random_observations(rng, rig, 2, 4);
  const ObservationSet sub = obs.select_joints({"joint_3", "joint_1"}, "subset");
  EXPECT_EQ(sub.keypoint_set_label(), "subset");
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 2; ++c)
    {
      EXPECT_EQ(sub.present(t, c, 0), obs.present(t, c, 3));
      EXPECT_EQ(sub.pixel(t, c, 1), obs.pixel(t, c, 1));
    }
  EXPECT_THROW(obs.select_joints({"nope"}, "x"), ShapeMismatch);
}
