#include <gtest/gtest.h>

#include "gradient_checks.hpp"

TEST(GradientGate, NetworkParameters)
{
  EXPECT_LT(gradcheck::network(), gradcheck::kTolerance);
  EXPECT_LT(gradcheck::network(21), gradcheck::kTolerance);
}

TEST(GradientGate, ReprojectionLossCoversAllHuberZones)
{
  EXPECT_LT(gradcheck::reprojection(), gradcheck::kTolerance);
}

TEST(GradientGate, SmoothnessLoss)
{
  EXPECT_LT(gradcheck::smooth(), gradcheck::kTolerance);
}

TEST(GradientGate, SkeletonLoss)
{
  EXPECT_LT(gradcheck::skeleton(), gradcheck::kTolerance);
}

TEST(GradientGate, FkJacobianOnDefaultModel)
{
  EXPECT_LT(gradcheck::fk_jacobian(), gradcheck::kTolerance);
  EXPECT_LT(gradcheck::fk_jacobian(17), gradcheck::kTolerance);
}

TEST(GradientGate, IkObjectiveSquaredKernel)
{
  EXPECT_LT(gradcheck::ik_objective(mocap::MarkerKernel::Squared), gradcheck::kTolerance);
}

TEST(GradientGate, IkObjectiveHuberKernel)
{
  EXPECT_LT(gradcheck::ik_objective(mocap::MarkerKernel::Huber), gradcheck::kTolerance);
}

TEST(GradientGate, EvaluationPointsAreNotDegenerate)
{
  // a vanishing analytic gradient would make the relative error meaningless
  const auto rc = gradcheck::reprojection_case();
  const mocap::ReprojectionTargets targets(rc.obs, rc.rig, rc.weights);
  const auto term = mocap::reprojection_term(rc.outputs, rc.frames, targets);
  EXPECT_GT(term.gradient.lpNorm<Eigen::Infinity>(), 1e-3);
}
