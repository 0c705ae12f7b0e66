#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "letac/gripper.hpp"
#include "letac/qp.hpp"

namespace letac {

// Learnable prediction-layer parameters plus the fixed cost scalars.
struct LayerParams {
  Eigen::VectorXd A_f;  // embedding transition vector, length M
  Eigen::MatrixXd L_f;  // lower-triangular factor of the embedding weight, MxM
  double eps = 1e-4;
  double Q_v = 1.0;
  double Q_a = 1.0;
  double P = 1.0;

  void validate(const MpcDims& dims) const {
    if (A_f.size() != dims.M) throw std::invalid_argument("LayerParams: A_f length != M");
    if (L_f.rows() != dims.M || L_f.cols() != dims.M) {
      throw std::invalid_argument("LayerParams: L_f must be MxM");
    }
    for (Eigen::Index i = 0; i < L_f.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < L_f.cols(); ++j) {
        if (L_f(i, j) != 0.0) {
          throw std::invalid_argument("LayerParams: L_f has nonzero entries above the diagonal");
        }
      }
    }
    if (!(eps > 0.0)) throw std::invalid_argument("LayerParams: eps must be > 0");
    if (!(Q_v > 0.0 && Q_a > 0.0 && P > 0.0)) {
      throw std::invalid_argument("LayerParams: Q_v, Q_a, P must be > 0");
    }
    if (!A_f.allFinite() || !L_f.allFinite()) {
      throw std::invalid_argument("LayerParams: non-finite parameter");
    }
  }
};

// Q_f = L_f L_f' + eps I; positive definite for every L_f when eps > 0.
inline Eigen::MatrixXd q_f_from_cholesky(const Eigen::MatrixXd& L_f, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("q_f_from_cholesky: eps must be > 0");
  const Eigen::Index M = L_f.rows();
  return L_f * L_f.transpose() + eps * Eigen::MatrixXd::Identity(M, M);
}

// Explicit condensed form of the horizon QP over the acceleration sequence.
// The condensed state is (f, v); p carries no cost and does not feed back,
// so it is excluded here and reconstructed by the rollout.
struct CondensedQP {
  Eigen::MatrixXd A;          // (M+1)x(M+1) reduced transition
  Eigen::VectorXd B;          // (M+1) input column
  Eigen::MatrixXd S_bar;      // N(M+1) x N prediction matrix
  Eigen::MatrixXd Q;          // (M+1)x(M+1) stage weight blkdiag(Q_f, Q_v)
  double P = 1.0;             // terminal amplifier on the last block
  double Q_a = 1.0;
  Eigen::MatrixXd H;          // NxN Hessian
  Eigen::MatrixXd x0_effect;  // N(M+1) x (M+1): (f_n, v_n) -> stacked free response
  int N = 0;
  int M = 0;

  Eigen::MatrixXd Q_bar_dense() const {
    const Eigen::Index b = M + 1;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N * b, N * b);
    for (int k = 0; k < N; ++k) {
      out.block(k * b, k * b, b, b) = (k == N - 1 ? P : 1.0) * Q;
    }
    return out;
  }
};

inline CondensedQP build_condensed(const LayerParams& params, const MpcDims& dims) {
  dims.validate();
  params.validate(dims);
  const int N = dims.N;
  const int M = dims.M;
  const double dt = dims.dt;
  const Eigen::Index b = M + 1;

  CondensedQP c;
  c.N = N;
  c.M = M;
  c.P = params.P;
  c.Q_a = params.Q_a;

  c.A = Eigen::MatrixXd::Identity(b, b);
  c.A.block(0, M, M, 1) = params.A_f;
  c.B = Eigen::VectorXd::Zero(b);
  c.B(M) = dt;

  c.Q = Eigen::MatrixXd::Zero(b, b);
  c.Q.topLeftCorner(M, M) = q_f_from_cholesky(params.L_f, params.eps);
  c.Q(M, M) = params.Q_v;

  // Powers of A have the closed form [[I, k*A_f], [0, 1]]; S_bar and the free
  // response are assembled from literal matrix powers so the structure under
  // test is exactly the block form.
  c.S_bar = Eigen::MatrixXd::Zero(N * b, N);
  Eigen::MatrixXd Apow = Eigen::MatrixXd::Identity(b, b);  // A^0
  std::vector<Eigen::VectorXd> AjB(N);                     // A^j * B
  for (int j = 0; j < N; ++j) {
    AjB[j] = Apow * c.B;
    Apow = c.A * Apow;
  }
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j <= i; ++j) {
      c.S_bar.block(i * b, j, b, 1) = AjB[i - j];
    }
  }

  c.x0_effect = Eigen::MatrixXd::Zero(N * b, b);
  Eigen::MatrixXd Ak = c.A;
  for (int k = 0; k < N; ++k) {
    c.x0_effect.middleRows(k * b, b) = Ak;
    Ak = c.A * Ak;
  }

  // H = 2(Q_a I + S_bar' Q_bar S_bar), applying Q_bar block-row-wise.
  Eigen::MatrixXd QS(N * b, N);
  for (int k = 0; k < N; ++k) {
    const double ck = (k == N - 1) ? params.P : 1.0;
    QS.middleRows(k * b, b) = ck * (c.Q * c.S_bar.middleRows(k * b, b));
  }
  c.H = 2.0 * (params.Q_a * Eigen::MatrixXd::Identity(N, N) +
               c.S_bar.transpose() * QS);
  return c;
}

// Linear term of the condensed QP around the free response of (f_n, v_n).
// p_n does not enter: the condensed cost contains no width term.
inline Eigen::VectorXd build_linear_term(const CondensedQP& c,
                                         const Eigen::VectorXd& f_n,
                                         double /*p_n*/, double v_n) {
  if (f_n.size() != c.M) throw std::invalid_argument("build_linear_term: f_n length != M");
  const Eigen::Index b = c.M + 1;
  Eigen::VectorXd x0(b);
  x0.head(c.M) = f_n;
  x0(c.M) = v_n;
  const Eigen::VectorXd free_resp = c.x0_effect * x0;
  Eigen::VectorXd Qfree(c.N * b);
  for (int k = 0; k < c.N; ++k) {
    const double ck = (k == c.N - 1) ? c.P : 1.0;
    Qfree.segment(k * b, b) = ck * (c.Q * free_resp.segment(k * b, b));
  }
  return 2.0 * (c.S_bar.transpose() * Qfree);
}

// Scalar-structured equivalent of the condensed QP. Because the stage weight
// touches the learnables only through alpha = A_f'Q_f A_f and
// beta = A_f'Q_f f_n, the Hessian and linear term collapse to fixed horizon
// tensors scaled by those two scalars; the backward pass differentiates this
// form directly. Tests pin it against build_condensed/build_linear_term.
struct HorizonBasis {
  Eigen::MatrixXd Phi;  // sum_k c_k phi_k phi_k'
  Eigen::MatrixXd Psi;  // sum_k c_k psi_k psi_k'
  Eigen::VectorXd r;    // sum_k c_k phi_k
  Eigen::VectorXd s;    // sum_k c_k k phi_k
  Eigen::VectorXd w;    // sum_k c_k psi_k
  Eigen::MatrixXd W;    // p response: p_{n+k} = p_n + k dt v_n + (W a)_k
};

inline HorizonBasis make_horizon_basis(int N, double P, double dt) {
  HorizonBasis hb;
  hb.Phi = Eigen::MatrixXd::Zero(N, N);
  hb.Psi = Eigen::MatrixXd::Zero(N, N);
  hb.r = Eigen::VectorXd::Zero(N);
  hb.s = Eigen::VectorXd::Zero(N);
  hb.w = Eigen::VectorXd::Zero(N);
  hb.W = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd phi(N), psi(N);
  for (int k = 1; k <= N; ++k) {
    const double ck = (k == N) ? P : 1.0;
    phi.setZero();
    psi.setZero();
    for (int i = 0; i < k; ++i) {
      phi(i) = static_cast<double>(k - 1 - i);
      psi(i) = 1.0;
      hb.W(k - 1, i) = dt * dt * (static_cast<double>(k - i) - 0.5);
    }
    hb.Phi += ck * phi * phi.transpose();
    hb.Psi += ck * psi * psi.transpose();
    hb.r += ck * phi;
    hb.s += ck * static_cast<double>(k) * phi;
    hb.w += ck * psi;
  }
  return hb;
}

// Condensed cost with deployment-style modifiers: velocity/acceleration
// weights scaled by (kv, ka) and the velocity cost centered on v_ref.
// Training uses kv = ka = 1, v_ref = 0.
struct CondensedCost {
  Eigen::MatrixXd H;
  Eigen::VectorXd q;
  double alpha = 0.0;
  double beta = 0.0;
};

inline CondensedCost build_cost_structured(const LayerParams& params,
                                           const MpcDims& dims,
                                           const HorizonBasis& hb,
                                           const Eigen::MatrixXd& Q_f,
                                           const Eigen::VectorXd& f_n,
                                           double v_n, double kv = 1.0,
                                           double ka = 1.0, double v_ref = 0.0) {
  const double dt = dims.dt;
  CondensedCost cc;
  const Eigen::VectorXd QfAf = Q_f * params.A_f;
  cc.alpha = params.A_f.dot(QfAf);
  cc.beta = f_n.dot(QfAf);
  const double qv = kv * params.Q_v;
  cc.H = 2.0 * ka * params.Q_a * Eigen::MatrixXd::Identity(dims.N, dims.N) +
         2.0 * dt * dt * (cc.alpha * hb.Phi + qv * hb.Psi);
  cc.q = 2.0 * dt *
         (cc.beta * hb.r + cc.alpha * v_n * hb.s + qv * (v_n - v_ref) * hb.w);
  return cc;
}

struct ForwardResult {
  Eigen::VectorXd a_star;
  Eigen::VectorXd p_traj;  // p_{n+1} .. p_{n+N}
  Eigen::VectorXd v_traj;
  Eigen::MatrixXd f_traj;  // M x N, columns f_{n+1} .. f_{n+N}
};

inline ForwardResult forward(const LayerParams& params, const MpcDims& dims,
                             const Eigen::VectorXd& f_n, double p_n, double v_n) {
  dims.validate();
  params.validate(dims);
  if (f_n.size() != dims.M) throw std::invalid_argument("forward: f_n length != M");
  const HorizonBasis hb = make_horizon_basis(dims.N, params.P, dims.dt);
  const Eigen::MatrixXd Q_f = q_f_from_cholesky(params.L_f, params.eps);
  const CondensedCost cc = build_cost_structured(params, dims, hb, Q_f, f_n, v_n);

  ForwardResult out;
  out.a_star = solve_unconstrained(cc.H, cc.q).x;
  const auto steps = rollout_stacked(f_n, GripperState{p_n, v_n}, params.A_f,
                                     out.a_star, dims);
  out.p_traj.resize(dims.N);
  out.v_traj.resize(dims.N);
  out.f_traj.resize(dims.M, dims.N);
  for (int k = 0; k < dims.N; ++k) {
    out.p_traj(k) = steps[k].p;
    out.v_traj(k) = steps[k].v;
    out.f_traj.col(k) = steps[k].f;
  }
  return out;
}

struct LayerGrads {
  Eigen::VectorXd grad_A_f;
  Eigen::MatrixXd grad_L_f;  // lower triangle populated, strict upper zero
  Eigen::VectorXd grad_f_n;
};

// Gradients of <grad_p_traj, p_traj> by implicit differentiation of
// H a* = -q: with the adjoint lambda = H^{-1} W' grad_p,
//   d<.>/dtheta = -lambda' (dH/dtheta a* + dq/dtheta),
// and (H, q) depend on the learnables only through alpha and beta.
inline LayerGrads backward(const LayerParams& params, const MpcDims& dims,
                           const Eigen::VectorXd& f_n, double /*p_n*/, double v_n,
                           const ForwardResult& fwd,
                           const Eigen::VectorXd& grad_p_traj) {
  if (fwd.a_star.size() != dims.N) {
    throw std::invalid_argument("backward: forward cache missing or wrong horizon");
  }
  if (grad_p_traj.size() != dims.N) {
    throw std::invalid_argument("backward: grad_p_traj length != N");
  }
  if (f_n.size() != dims.M) throw std::invalid_argument("backward: f_n length != M");
  const double dt = dims.dt;
  const HorizonBasis hb = make_horizon_basis(dims.N, params.P, dt);
  const Eigen::MatrixXd Q_f = q_f_from_cholesky(params.L_f, params.eps);
  const CondensedCost cc = build_cost_structured(params, dims, hb, Q_f, f_n, v_n);

  Eigen::LLT<Eigen::MatrixXd> llt(cc.H);
  if (llt.info() != Eigen::Success) {
    throw QpNotSpdError("backward: condensed Hessian is not positive definite");
  }
  const Eigen::VectorXd lambda = llt.solve(hb.W.transpose() * grad_p_traj);

  const double g_alpha =
      -lambda.dot(2.0 * dt * dt * (hb.Phi * fwd.a_star) + 2.0 * dt * v_n * hb.s);
  const double g_beta = -lambda.dot(2.0 * dt * hb.r);

  const Eigen::VectorXd QfAf = Q_f * params.A_f;
  LayerGrads g;
  g.grad_f_n = g_beta * QfAf;
  g.grad_A_f = 2.0 * g_alpha * QfAf + g_beta * (Q_f * f_n);
  const Eigen::MatrixXd G = g_alpha * params.A_f * params.A_f.transpose() +
                            g_beta * params.A_f * f_n.transpose();
  g.grad_L_f = ((G + G.transpose()) * params.L_f)
                   .triangularView<Eigen::Lower>();
  return g;
}

struct FeasibilityReport {
  double min_eigenvalue_H = 0.0;
  int rank_S_bar = 0;
  bool spd = false;
};

// Certifies the horizon QP: the condensed Hessian must be SPD and the
// prediction matrix full column rank for every admissible parameter setting.
inline FeasibilityReport check_feasibility(const LayerParams& params,
                                           const MpcDims& dims) {
  const CondensedQP c = build_condensed(params, dims);
  FeasibilityReport rep;
  const Eigen::MatrixXd Hs = 0.5 * (c.H + c.H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Hs);
  rep.min_eigenvalue_H = eig.eigenvalues().minCoeff();
  rep.rank_S_bar = static_cast<int>(
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(c.S_bar).rank());
  rep.spd = rep.min_eigenvalue_H > 0.0 && rep.rank_S_bar == dims.N;
  return rep;
}

}  // namespace letac
