#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace letac {

// Dense strictly convex QP:
//   min 1/2 x'Hx + q'x
//   s.t. lb <= x <= ub            (per-variable bounds, +-inf = absent)
//        glo <= G x <= ghi        (optional stacked affine rows)
// Empty lb/ub/G mean the corresponding constraints are absent entirely.
struct DenseQP {
  Eigen::MatrixXd H;
  Eigen::VectorXd q;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
  Eigen::MatrixXd G;
  Eigen::VectorXd glo;
  Eigen::VectorXd ghi;

  void validate() const {
    const auto n = H.rows();
    if (H.cols() != n || q.size() != n) {
      throw std::invalid_argument("DenseQP: H/q dimensions inconsistent");
    }
    const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw std::invalid_argument("DenseQP: H is not symmetric");
    }
    if (lb.size() != 0 && lb.size() != n) {
      throw std::invalid_argument("DenseQP: lb length mismatch");
    }
    if (ub.size() != 0 && ub.size() != n) {
      throw std::invalid_argument("DenseQP: ub length mismatch");
    }
    if (lb.size() == n && ub.size() == n && (lb.array() > ub.array()).any()) {
      throw std::invalid_argument("DenseQP: lb > ub");
    }
    if (G.size() != 0) {
      if (G.cols() != n || glo.size() != G.rows() || ghi.size() != G.rows()) {
        throw std::invalid_argument("DenseQP: affine row dimensions inconsistent");
      }
      if ((glo.array() > ghi.array()).any()) {
        throw std::invalid_argument("DenseQP: glo > ghi");
      }
    }
  }
};

enum class SolveStatus { ok, not_spd, infeasible, max_iterations };

struct QPSolution {
  Eigen::VectorXd x;
  // One multiplier per expanded one-sided row, aligned with expand_rows();
  // nonnegative, nonzero only where the row is active.
  Eigen::VectorXd multipliers;
  double kkt_residual = 0.0;
  int iterations = 0;
  SolveStatus status = SolveStatus::ok;
};

struct QpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct QpNotSpdError : QpError {
  using QpError::QpError;
};
struct QpInfeasibleError : QpError {
  using QpError::QpError;
};
struct QpIterationError : QpError {
  using QpError::QpError;
};

// All inequality constraints of a DenseQP as one-sided rows  c_i'x <= d_i.
// Order: per variable lower then upper bound (finite ones only, ascending
// index), then per affine row lower then upper side. Multipliers in
// QPSolution follow this exact order.
inline void expand_rows(const DenseQP& qp, Eigen::MatrixXd& C,
                        Eigen::VectorXd& d) {
  const auto n = qp.H.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (qp.lb.size() == n && qp.lb(i) > -inf) {
      Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
      r(i) = -1.0;
      rows.push_back(r);
      rhs.push_back(-qp.lb(i));
    }
    if (qp.ub.size() == n && qp.ub(i) < inf) {
      Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
      r(i) = 1.0;
      rows.push_back(r);
      rhs.push_back(qp.ub(i));
    }
  }
  for (Eigen::Index j = 0; j < qp.G.rows(); ++j) {
    if (qp.glo(j) > -inf) {
      rows.push_back(-qp.G.row(j).transpose());
      rhs.push_back(-qp.glo(j));
    }
    if (qp.ghi(j) < inf) {
      rows.push_back(qp.G.row(j).transpose());
      rhs.push_back(qp.ghi(j));
    }
  }
  C.resize(static_cast<Eigen::Index>(rows.size()), n);
  d.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    C.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
    d(static_cast<Eigen::Index>(k)) = rhs[k];
  }
}

namespace detail {

// KKT residual in the expanded-row convention: max of stationarity,
// primal violation and complementarity, all in the infinity norm.
inline double kkt_residual(const Eigen::MatrixXd& H, const Eigen::VectorXd& q,
                           const Eigen::MatrixXd& C, const Eigen::VectorXd& d,
                           const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lambda) {
  double res = (H * x + q + C.transpose() * lambda).cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < C.rows(); ++i) {
    const double s = C.row(i).dot(x) - d(i);
    res = std::max(res, s);                     // primal violation
    res = std::max(res, std::abs(lambda(i) * s));  // complementarity
  }
  return res;
}

// Dual active-set solve over one-sided rows. Starts at the unconstrained
// minimizer and adds the most-violated row until feasible, dropping rows
// whose multiplier would cross zero. H must be SPD.
inline SolveStatus solve_rows(const Eigen::MatrixXd& H,
                              const Eigen::VectorXd& q,
                              const Eigen::MatrixXd& C,
                              const Eigen::VectorXd& d, QPSolution& out,
                              std::string* message) {
  const Eigen::Index n = H.rows();
  const Eigen::Index m = C.rows();
  const double inf = std::numeric_limits<double>::infinity();
  constexpr double kFeasTol = 1e-10;
  constexpr double kCurvTol = 1e-14;

  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    if (message) *message = "Hessian factorization failed: H not positive definite";
    out.status = SolveStatus::not_spd;
    return out.status;
  }

  Eigen::VectorXd x = llt.solve(-q);
  std::vector<Eigen::Index> active;
  Eigen::VectorXd u(0);  // multipliers of active rows, same order as `active`
  int iterations = 0;
  const int iter_cap = 50 * static_cast<int>(n + m + 1);

  auto violation = [&](Eigen::Index i) { return C.row(i).dot(x) - d(i); };

  while (true) {
    // Most violated row; lowest index wins ties for determinism.
    Eigen::Index p = -1;
    double worst = kFeasTol;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = violation(i);
      if (s > worst) {
        worst = s;
        p = i;
      }
    }
    if (p < 0) break;  // feasible and optimal

    double u_p = 0.0;  // multiplier accumulated for row p
    while (true) {
      if (++iterations > iter_cap) {
        if (message) *message = "active-set iteration cap exceeded";
        out.status = SolveStatus::max_iterations;
        out.x = x;
        out.iterations = iterations;
        return out.status;
      }
      const Eigen::VectorXd cp = C.row(p).transpose();
      const Eigen::Index na = static_cast<Eigen::Index>(active.size());

      // Step directions: Hz + C_A'r = cp, C_A z = 0 (Schur complement on H).
      Eigen::VectorXd z;
      Eigen::VectorXd r(na);
      const Eigen::VectorXd Hicp = llt.solve(cp);
      if (na == 0) {
        z = Hicp;
      } else {
        Eigen::MatrixXd CA(na, n);
        for (Eigen::Index k = 0; k < na; ++k) CA.row(k) = C.row(active[k]);
        const Eigen::MatrixXd W = llt.solve(CA.transpose());
        const Eigen::MatrixXd S = CA * W;
        r = S.ldlt().solve(CA * Hicp);
        z = Hicp - W * r;
      }

      const double curv = cp.dot(z);
      const double s_p = violation(p);

      double t2 = inf;
      if (curv > kCurvTol) t2 = s_p / curv;

      double t1 = inf;
      Eigen::Index drop = -1;
      for (Eigen::Index k = 0; k < na; ++k) {
        if (r(k) > kCurvTol) {
          const double t = u(k) / r(k);
          if (t < t1) {
            t1 = t;
            drop = k;
          }
        }
      }

      if (t1 == inf && t2 == inf) {
        if (message) *message = "constraints infeasible: no step reduces violation";
        out.status = SolveStatus::infeasible;
        out.x = x;
        out.iterations = iterations;
        return out.status;
      }

      const double t = std::min(t1, t2);
      if (t > 0.0) {
        x -= t * z;
        u -= t * r;
        u_p += t;
      }

      if (t2 <= t1) {
        // Row p becomes active with multiplier u_p.
        active.push_back(p);
        u.conservativeResize(na + 1);
        u(na) = u_p;
        break;
      }
      // Multiplier of `drop` reached zero: deactivate and keep working on p.
      active.erase(active.begin() + drop);
      Eigen::VectorXd u2(na - 1);
      Eigen::Index w = 0;
      for (Eigen::Index k = 0; k < na; ++k) {
        if (k != drop) u2(w++) = u(k);
      }
      u = u2;
    }
  }

  out.x = x;
  out.multipliers = Eigen::VectorXd::Zero(m);
  for (std::size_t k = 0; k < active.size(); ++k) {
    out.multipliers(active[k]) = u(static_cast<Eigen::Index>(k));
  }
  out.iterations = iterations;
  out.kkt_residual = kkt_residual(H, q, C, d, x, out.multipliers);
  out.status = SolveStatus::ok;
  return out.status;
}

inline SolveStatus solve_box_impl(const DenseQP& qp, QPSolution& out,
                                  std::string* message) {
  qp.validate();
  Eigen::MatrixXd C;
  Eigen::VectorXd d;
  expand_rows(qp, C, d);
  return solve_rows(qp.H, qp.q, C, d, out, message);
}

}  // namespace detail

// Pure linear solve H x = -q for SPD H; the training-time path.
inline QPSolution solve_unconstrained(const Eigen::MatrixXd& H,
                                      const Eigen::VectorXd& q) {
  if (H.rows() != H.cols() || H.rows() != q.size()) {
    throw std::invalid_argument("solve_unconstrained: dimension mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    throw QpNotSpdError("solve_unconstrained: H is not positive definite");
  }
  QPSolution sol;
  sol.x = llt.solve(-q);
  // One refinement step keeps the residual at rounding level even for the
  // stiffer deployment Hessians.
  sol.x += llt.solve(-q - H * sol.x);
  sol.multipliers = Eigen::VectorXd::Zero(0);
  sol.kkt_residual = (H * sol.x + q).cwiseAbs().maxCoeff();
  sol.iterations = 1;
  const double tol = 1e-9 * std::max(1.0, q.cwiseAbs().maxCoeff());
  if (!(sol.kkt_residual <= tol)) {
    throw QpNotSpdError("solve_unconstrained: residual above tolerance");
  }
  return sol;
}

// Box- and affine-constrained solve. Throws on infeasibility or iteration
// overrun; see solve_batch for the non-throwing per-index variant.
inline QPSolution solve_box(const DenseQP& qp) {
  QPSolution sol;
  std::string message;
  const SolveStatus st = detail::solve_box_impl(qp, sol, &message);
  switch (st) {
    case SolveStatus::ok:
      return sol;
    case SolveStatus::not_spd:
      throw QpNotSpdError("solve_box: " + message);
    case SolveStatus::infeasible:
      throw QpInfeasibleError("solve_box: " + message);
    case SolveStatus::max_iterations:
    default:
      throw QpIterationError("solve_box: " + message);
  }
}

inline QPSolution solve_box(const Eigen::MatrixXd& H, const Eigen::VectorXd& q,
                            const Eigen::VectorXd& lb,
                            const Eigen::VectorXd& ub) {
  DenseQP qp;
  qp.H = H;
  qp.q = q;
  qp.lb = lb;
  qp.ub = ub;
  return solve_box(qp);
}

struct BatchResult {
  QPSolution solution;
  std::string message;  // empty unless solution.status != ok
};

// Solves each problem independently; failures are recorded per index and
// never abort the batch. Sequential, so ordering is trivially deterministic.
inline std::vector<BatchResult> solve_batch(const std::vector<DenseQP>& problems) {
  std::vector<BatchResult> results(problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    try {
      detail::solve_box_impl(problems[i], results[i].solution,
                             &results[i].message);
    } catch (const std::invalid_argument& e) {
      results[i].solution.status = SolveStatus::infeasible;
      results[i].message = e.what();
    }
  }
  return results;
}

}  // namespace letac
