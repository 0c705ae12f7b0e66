#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace letac {

// Gripper width state. p is the finger opening in mm, v its rate in mm/s.
struct GripperState {
  double p = 0.0;
  double v = 0.0;
};

// Horizon length N, embedding dimension M and control period dt shared by the
// prediction layer, the controllers and training.
struct MpcDims {
  int N = 15;
  int M = 20;
  double dt = 1.0 / 25.0;

  void validate() const {
    if (N < 1) throw std::invalid_argument("MpcDims: N must be >= 1");
    if (M < 1) throw std::invalid_argument("MpcDims: M must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("MpcDims: dt must be > 0");
  }
};

// One step of the discrete double integrator:
//   p' = p + v*dt + 0.5*dt^2*a,  v' = v + dt*a
inline GripperState step_gripper(const GripperState& s, double a, double dt) {
  if (!std::isfinite(s.p) || !std::isfinite(s.v) || !std::isfinite(a) ||
      !std::isfinite(dt)) {
    throw std::invalid_argument("step_gripper: non-finite input");
  }
  return GripperState{s.p + s.v * dt + 0.5 * dt * dt * a, s.v + dt * a};
}

struct StackedStep {
  Eigen::VectorXd f;  // embedding after the step
  double p = 0.0;
  double v = 0.0;
};

// Rolls the stacked (f, p, v) system forward through the acceleration
// sequence. The embedding advances with the pre-step velocity,
//   f_{k+1} = f_k + A_f * v_k,
// while (p, v) follow the double integrator. Implemented as one literal
// block-matrix iteration x' = A x + B a; tests compare it against an
// independent per-step scalar loop.
inline std::vector<StackedStep> rollout_stacked(const Eigen::VectorXd& f0,
                                                const GripperState& s0,
                                                const Eigen::VectorXd& A_f,
                                                const Eigen::VectorXd& accels,
                                                const MpcDims& dims) {
  dims.validate();
  if (f0.size() != dims.M || A_f.size() != dims.M) {
    throw std::invalid_argument("rollout_stacked: embedding size != M");
  }
  if (accels.size() != dims.N) {
    throw std::invalid_argument("rollout_stacked: acceleration count != N");
  }
  const int M = dims.M;
  const int n = M + 2;
  const double dt = dims.dt;

  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  A.block(0, M + 1, M, 1) = A_f;  // f row: + A_f * v
  A(M, M + 1) = dt;               // p row: + dt * v
  Eigen::VectorXd B = Eigen::VectorXd::Zero(n);
  B(M) = 0.5 * dt * dt;
  B(M + 1) = dt;

  Eigen::VectorXd x(n);
  x.head(M) = f0;
  x(M) = s0.p;
  x(M + 1) = s0.v;

  std::vector<StackedStep> out;
  out.reserve(dims.N);
  for (int k = 0; k < dims.N; ++k) {
    x = A * x + B * accels(k);
    out.push_back(StackedStep{x.head(M), x(M), x(M + 1)});
  }
  return out;
}

}  // namespace letac
