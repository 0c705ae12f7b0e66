#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "letac/checkpoint.hpp"
#include "letac/encoder.hpp"
#include "letac/gripper.hpp"
#include "letac/mpc_layer.hpp"
#include "letac/qp.hpp"
#include "letac/sim.hpp"

namespace letac {

struct SaturationBounds {
  double p_min = 0.0, p_max = 70.0;    // mm
  double v_min = -15.0, v_max = 15.0;  // mm/s
  double a_min = -100.0, a_max = 100.0;  // mm/s^2

  void validate() const {
    if (!(p_min < p_max && v_min < v_max && a_min < a_max)) {
      throw std::invalid_argument("SaturationBounds: min must be < max per channel");
    }
  }
};

struct DeploymentConfig {
  double K_v = 100.0;
  double K_a = 2.0;
  double K_d = 0.02;  // mm/s of closing bias per marker unit
  SaturationBounds bounds;
  double dt = 1.0 / 25.0;  // control period, s

  void validate() const {
    if (!(K_v > 0.0 && K_a > 0.0)) throw std::invalid_argument("DeploymentConfig: K_v, K_a must be > 0");
    if (!(K_d >= 0.0)) throw std::invalid_argument("DeploymentConfig: K_d must be >= 0");
    if (!(dt > 0.0)) throw std::invalid_argument("DeploymentConfig: dt must be > 0");
    bounds.validate();
  }
};

struct PDConfig {
  double c_ref = 900.0;
  double Q_d = 2.0;
  double dt = 1.0 / 60.0;
  double contact_threshold_depth = 0.5;  // mm, imprint threshold for the c feedback
  double precontact_speed = 2.5;         // mm/s closing when nothing is felt
  double p_min = 0.0;

  double K_P() const { return 1.0 / (4.0e4 * dt); }
  double K_D() const { return 1.0 / (3.6e5 * dt); }

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("PDConfig: dt must be > 0");
    if (!(K_P() > 0.0 && K_D() > 0.0)) throw std::invalid_argument("PDConfig: gains must be positive");
  }
};

struct MPCBaselineConfig {
  double c_ref = 900.0;
  double Q_d = 2.0;
  double P = 5.0;
  double Q_c = 36.0;
  int N = 10;
  double K_c = 36000.0;  // contact-area change per (m/s) of closing, Eq.-style constant
  double Q_v = 1.0;
  double Q_a = 1.0;
  double dt = 1.0 / 60.0;
  SaturationBounds bounds;
  double contact_threshold_depth = 0.5;
  double precontact_speed = 2.5;

  void validate() const {
    if (!(Q_c > 0.0 && Q_v > 0.0 && Q_a > 0.0 && P > 0.0)) {
      throw std::invalid_argument("MPCBaselineConfig: weights must be positive");
    }
    if (N <= 0 || !(dt > 0.0)) throw std::invalid_argument("MPCBaselineConfig: bad horizon");
    bounds.validate();
  }
};

struct ControlOutput {
  double width_ref = 0.0;  // mm
  bool solver_ok = true;
  double a0 = 0.0;  // first commanded acceleration, mm/s^2 (QP controllers)
};

// Stacked one-sided-pair affine rows keeping every horizon step's velocity
// and position inside the saturation box; accelerations are the box bounds.
struct HorizonConstraints {
  Eigen::MatrixXd C;   // 2N x N (N velocity rows, then N position rows)
  Eigen::VectorXd lo;  // 2N
  Eigen::VectorXd hi;  // 2N
};

inline HorizonConstraints build_horizon_constraints(const MpcDims& dims, double p_n,
                                                    double v_n,
                                                    const SaturationBounds& bounds,
                                                    const Eigen::MatrixXd& W) {
  const int N = dims.N;
  const double dt = dims.dt;
  HorizonConstraints hc;
  hc.C = Eigen::MatrixXd::Zero(2 * N, N);
  hc.lo.resize(2 * N);
  hc.hi.resize(2 * N);
  for (int k = 1; k <= N; ++k) {
    for (int i = 0; i < k; ++i) hc.C(k - 1, i) = dt;
    hc.lo(k - 1) = bounds.v_min - v_n;
    hc.hi(k - 1) = bounds.v_max - v_n;
    hc.C.row(N + k - 1) = W.row(k - 1);
    const double free_p = p_n + k * dt * v_n;
    hc.lo(N + k - 1) = bounds.p_min - free_p;
    hc.hi(N + k - 1) = bounds.p_max - free_p;
  }
  return hc;
}

// Deployed learned controller: the trained horizon QP with amplified
// velocity/acceleration weights, a marker-driven velocity target, and the
// saturation box enforced over the whole horizon. On solver failure the
// previous reference is held and flagged.
class LetacController {
 public:
  LetacController(Checkpoint ck, DeploymentConfig cfg)
      : ck_(std::move(ck)), cfg_(cfg) {
    cfg_.validate();
    ck_.validate();
    if (std::abs(ck_.dims.dt - cfg_.dt) > 1e-12) {
      throw std::invalid_argument("LetacController: checkpoint dt != control period");
    }
    basis_ = make_horizon_basis(ck_.dims.N, ck_.layer.P, ck_.dims.dt);
    Q_f_ = q_f_from_cholesky(ck_.layer.L_f, ck_.layer.eps);
  }

  ControlOutput step(const TactileObservation& obs, const GripperState& state) {
    ControlOutput out;
    const Eigen::VectorXd f_n = encode(obs, ck_.encoder);
    const double v_ref = -cfg_.K_d * obs.d;
    const CondensedCost cc = build_cost_structured(ck_.layer, ck_.dims, basis_, Q_f_,
                                                   f_n, state.v, cfg_.K_v, cfg_.K_a, v_ref);
    const HorizonConstraints hc =
        build_horizon_constraints(ck_.dims, state.p, state.v, cfg_.bounds, basis_.W);
    DenseQP qp;
    qp.H = cc.H;
    qp.q = cc.q;
    qp.lb = Eigen::VectorXd::Constant(ck_.dims.N, cfg_.bounds.a_min);
    qp.ub = Eigen::VectorXd::Constant(ck_.dims.N, cfg_.bounds.a_max);
    qp.G = hc.C;
    qp.glo = hc.lo;
    qp.ghi = hc.hi;
    try {
      const QPSolution sol = solve_box(qp);
      out.a0 = sol.x(0);
      out.width_ref = state.p + ck_.dims.dt * state.v +
                      0.5 * ck_.dims.dt * ck_.dims.dt * out.a0;
      prev_ref_ = out.width_ref;
      have_prev_ = true;
    } catch (const QpError&) {
      out.solver_ok = false;
      out.width_ref = have_prev_ ? prev_ref_ : state.p;
    }
    return out;
  }

  const Checkpoint& checkpoint() const { return ck_; }
  const DeploymentConfig& config() const { return cfg_; }

 private:
  Checkpoint ck_;
  DeploymentConfig cfg_;
  HorizonBasis basis_;
  Eigen::MatrixXd Q_f_;
  double prev_ref_ = 0.0;
  bool have_prev_ = false;
};

inline ControlOutput letac_step(const Checkpoint& ck, const TactileObservation& obs,
                                const GripperState& state, const DeploymentConfig& cfg) {
  LetacController ctl(ck, cfg);
  return ctl.step(obs, state);
}

// Proportional-derivative baseline on thresholded contact area.
class PDController {
 public:
  explicit PDController(PDConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  ControlOutput step(const TactileObservation& obs, const GripperState& state) {
    ControlOutput out;
    const double c_n = thresholded_contact_area(obs, cfg_.contact_threshold_depth);
    if (c_n <= 0.0) {
      // Nothing felt: contract at the fixed pre-contact speed.
      prev_c_ = 0.0;
      have_prev_ = false;
      out.width_ref = std::max(cfg_.p_min, state.p - cfg_.precontact_speed * cfg_.dt);
      return out;
    }
    const double c_dot = have_prev_ ? (c_n - prev_c_) / cfg_.dt : 0.0;
    const double v = cfg_.K_P() * (c_n - cfg_.c_ref - cfg_.Q_d * obs.d) + cfg_.K_D() * c_dot;
    out.width_ref = state.p + v * cfg_.dt;
    prev_c_ = c_n;
    have_prev_ = true;
    return out;
  }

 private:
  PDConfig cfg_;
  double prev_c_ = 0.0;
  bool have_prev_ = false;
};

// Stateless core of the PD law, exposed for direct checks.
inline double pd_velocity(double c_n, double d_n, double c_dot, const PDConfig& cfg) {
  return cfg.K_P() * (c_n - cfg.c_ref - cfg.Q_d * d_n) + cfg.K_D() * c_dot;
}

// Model-based MPC baseline: scalar linear contact model
// c_{k+1} = c_k - K_c * v_k * dt (K_c given per m/s, applied per mm/s),
// tracked through the same condensed QP machinery with a one-dimensional
// embedding e = c - c_ref - Q_d * d held to zero.
class MpcBaselineController {
 public:
  explicit MpcBaselineController(MPCBaselineConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    dims_.N = cfg_.N;
    dims_.M = 1;
    dims_.dt = cfg_.dt;
    layer_.A_f = Eigen::VectorXd::Constant(1, -(cfg_.K_c / 1000.0) * cfg_.dt);
    layer_.L_f = Eigen::MatrixXd::Constant(1, 1, std::sqrt(std::max(0.0, cfg_.Q_c - 1e-8)));
    layer_.eps = 1e-8;
    layer_.Q_v = cfg_.Q_v;
    layer_.Q_a = cfg_.Q_a;
    layer_.P = cfg_.P;
    basis_ = make_horizon_basis(dims_.N, cfg_.P, dims_.dt);
    Q_f_ = Eigen::MatrixXd::Constant(1, 1, cfg_.Q_c);
  }

  ControlOutput step(const TactileObservation& obs, const GripperState& state) {
    const double c_n = thresholded_contact_area(obs, cfg_.contact_threshold_depth);
    if (c_n <= 0.0) {
      ControlOutput out;
      out.width_ref = std::max(cfg_.bounds.p_min, state.p - cfg_.precontact_speed * cfg_.dt);
      return out;
    }
    return step_on_error(c_n - cfg_.c_ref - cfg_.Q_d * obs.d, state);
  }

  // Tracking step on an explicit model error e = c - c_ref - Q_d * d; used
  // directly by the matched-plant fidelity checks.
  ControlOutput step_on_error(double e_n, const GripperState& state) {
    ControlOutput out;
    Eigen::VectorXd f_n = Eigen::VectorXd::Constant(1, e_n);
    const CondensedCost cc =
        build_cost_structured(layer_, dims_, basis_, Q_f_, f_n, state.v, 1.0, 1.0, 0.0);
    const HorizonConstraints hc =
        build_horizon_constraints(dims_, state.p, state.v, cfg_.bounds, basis_.W);
    DenseQP qp;
    qp.H = cc.H;
    qp.q = cc.q;
    qp.lb = Eigen::VectorXd::Constant(dims_.N, cfg_.bounds.a_min);
    qp.ub = Eigen::VectorXd::Constant(dims_.N, cfg_.bounds.a_max);
    qp.G = hc.C;
    qp.glo = hc.lo;
    qp.ghi = hc.hi;
    try {
      const QPSolution sol = solve_box(qp);
      out.a0 = sol.x(0);
      out.width_ref = state.p + dims_.dt * state.v + 0.5 * dims_.dt * dims_.dt * out.a0;
      prev_ref_ = out.width_ref;
      have_prev_ = true;
    } catch (const QpError&) {
      out.solver_ok = false;
      out.width_ref = have_prev_ ? prev_ref_ : state.p;
    }
    return out;
  }

  const MpcDims& dims() const { return dims_; }

 private:
  MPCBaselineConfig cfg_;
  MpcDims dims_;
  LayerParams layer_;
  HorizonBasis basis_;
  Eigen::MatrixXd Q_f_;
  double prev_ref_ = 0.0;
  bool have_prev_ = false;
};

struct OpenLoopConfig {
  double force_threshold = 2.0;  // N
  double close_speed = 2.5;       // mm/s
  double dt = 1.0 / 60.0;
  double p_min = 0.0;
};

// Closes at a constant rate until the grip force first exceeds the
// threshold, then latches that width forever.
class OpenLoopController {
 public:
  explicit OpenLoopController(OpenLoopConfig cfg = OpenLoopConfig{}) : cfg_(cfg) {}

  const OpenLoopConfig& config() const { return cfg_; }

  ControlOutput step(double force_feedback, const GripperState& state) {
    ControlOutput out;
    if (!latched_ && force_feedback > cfg_.force_threshold) {
      latched_ = true;
      latch_width_ = state.p;
    }
    out.width_ref = latched_
                        ? latch_width_
                        : std::max(cfg_.p_min, state.p - cfg_.close_speed * cfg_.dt);
    return out;
  }

  bool latched() const { return latched_; }

 private:
  OpenLoopConfig cfg_;
  bool latched_ = false;
  double latch_width_ = 0.0;
};

inline ControlOutput open_loop_step(double force_feedback, const GripperState& state,
                                    OpenLoopController& ctl) {
  return ctl.step(force_feedback, state);
}

}  // namespace letac
