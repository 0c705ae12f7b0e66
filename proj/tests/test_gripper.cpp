#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "letac/gripper.hpp"
#include "letac/rng.hpp"

namespace {

using letac::GripperState;
using letac::MpcDims;
using letac::Rng;

}  // namespace

TEST(StepGripper, MatchesClosedFormKinematics) {
  const GripperState s{42.0, -3.0};
  const double a = 1.75;
  const double dt = 0.04;
  const GripperState out = letac::step_gripper(s, a, dt);
  EXPECT_DOUBLE_EQ(out.p, 42.0 - 3.0 * 0.04 + 0.5 * 0.04 * 0.04 * 1.75);
  EXPECT_DOUBLE_EQ(out.v, -3.0 + 0.04 * 1.75);
}

TEST(StepGripper, ConstantAccelerationRecoversQuadratic) {
  // n steps at constant a must land on p0 + v0*T + a*T^2/2 exactly, because
  // the discrete update is the exact integral of piecewise-constant a.
  const double dt = 1.0 / 25.0;
  const double a = -0.8;
  GripperState s{10.0, 2.0};
  const int n = 50;
  for (int k = 0; k < n; ++k) s = letac::step_gripper(s, a, dt);
  const double T = n * dt;
  EXPECT_NEAR(s.p, 10.0 + 2.0 * T + 0.5 * a * T * T, 1e-12);
  EXPECT_NEAR(s.v, 2.0 + a * T, 1e-12);
}

TEST(StepGripper, RejectsNonFiniteInputs) {
  const GripperState s{1.0, 1.0};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(letac::step_gripper(GripperState{nan, 0.0}, 0.0, 0.1),
               std::invalid_argument);
  EXPECT_THROW(letac::step_gripper(s, inf, 0.1), std::invalid_argument);
  EXPECT_THROW(letac::step_gripper(s, 0.0, nan), std::invalid_argument);
}

TEST(MpcDims, ValidateRejectsDegenerateShapes) {
  MpcDims d;
  d.validate();
  MpcDims bad_n = d;
  bad_n.N = 0;
  EXPECT_THROW(bad_n.validate(), std::invalid_argument);
  MpcDims bad_m = d;
  bad_m.M = -1;
  EXPECT_THROW(bad_m.validate(), std::invalid_argument);
  MpcDims bad_dt = d;
  bad_dt.dt = 0.0;
  EXPECT_THROW(bad_dt.validate(), std::invalid_argument);
}

TEST(RolloutStacked, MatchesIndependentScalarLoop) {
  Rng rng(0x60107ULL);
  for (int trial = 0; trial < 25; ++trial) {
    MpcDims dims;
    dims.N = 1 + static_cast<int>(rng.below(20));
    dims.M = 1 + static_cast<int>(rng.below(25));
    dims.dt = rng.uniform(0.01, 0.1);

    Eigen::VectorXd f0(dims.M), A_f(dims.M), accels(dims.N);
    for (int i = 0; i < dims.M; ++i) f0(i) = rng.normal();
    for (int i = 0; i < dims.M; ++i) A_f(i) = rng.normal();
    for (int k = 0; k < dims.N; ++k) accels(k) = rng.normal();
    const GripperState s0{rng.uniform(-20.0, 80.0), rng.normal()};

    const auto traj = letac::rollout_stacked(f0, s0, A_f, accels, dims);
    ASSERT_EQ(traj.size(), static_cast<std::size_t>(dims.N));

    // Reference: advance each scalar recurrence separately, no matrices.
    std::vector<double> f(static_cast<std::size_t>(dims.M));
    for (int i = 0; i < dims.M; ++i) f[static_cast<std::size_t>(i)] = f0(i);
    double p = s0.p;
    double v = s0.v;
    for (int k = 0; k < dims.N; ++k) {
      for (int i = 0; i < dims.M; ++i) {
        f[static_cast<std::size_t>(i)] += A_f(i) * v;
      }
      p += v * dims.dt + 0.5 * dims.dt * dims.dt * accels(k);
      v += dims.dt * accels(k);
      for (int i = 0; i < dims.M; ++i) {
        EXPECT_NEAR(traj[static_cast<std::size_t>(k)].f(i),
                    f[static_cast<std::size_t>(i)], 1e-11)
            << "trial " << trial << " step " << k << " channel " << i;
      }
      EXPECT_NEAR(traj[static_cast<std::size_t>(k)].p, p, 1e-11);
      EXPECT_NEAR(traj[static_cast<std::size_t>(k)].v, v, 1e-11);
    }
  }
}

TEST(RolloutStacked, EmbeddingUsesPreStepVelocity) {
  // With one step, f_1 = f_0 + A_f * v_0: the embedding must advance with the
  // velocity before the step, not the updated one.
  MpcDims dims;
  dims.N = 1;
  dims.M = 2;
  dims.dt = 0.5;
  Eigen::VectorXd f0(2), A_f(2), accels(1);
  f0 << 1.0, -2.0;
  A_f << 3.0, 0.25;
  accels << 4.0;  // would change v from 2 to 4; f must still use v = 2
  const auto traj = letac::rollout_stacked(f0, GripperState{0.0, 2.0}, A_f,
                                           accels, dims);
  EXPECT_DOUBLE_EQ(traj[0].f(0), 1.0 + 3.0 * 2.0);
  EXPECT_DOUBLE_EQ(traj[0].f(1), -2.0 + 0.25 * 2.0);
  EXPECT_DOUBLE_EQ(traj[0].v, 2.0 + 0.5 * 4.0);
}

TEST(RolloutStacked, RejectsMismatchedShapes) {
  MpcDims dims;
  dims.N = 3;
  dims.M = 4;
  const Eigen::VectorXd f_ok = Eigen::VectorXd::Zero(4);
  const Eigen::VectorXd f_bad = Eigen::VectorXd::Zero(5);
  const Eigen::VectorXd a_ok = Eigen::VectorXd::Zero(3);
  const Eigen::VectorXd a_bad = Eigen::VectorXd::Zero(2);
  const GripperState s{};
  EXPECT_THROW(letac::rollout_stacked(f_bad, s, f_ok, a_ok, dims),
               std::invalid_argument);
  EXPECT_THROW(letac::rollout_stacked(f_ok, s, f_bad, a_ok, dims),
               std::invalid_argument);
  EXPECT_THROW(letac::rollout_stacked(f_ok, s, f_ok, a_bad, dims),
               std::invalid_argument);
}
