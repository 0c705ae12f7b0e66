#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "letac/qp.hpp"
#include "letac/rng.hpp"

namespace {

using letac::DenseQP;
using letac::QPSolution;
using letac::Rng;

double objective(const DenseQP& qp, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(qp.H * x) + qp.q.dot(x);
}

// Exhaustive reference solver: tries every active subset of the one-sided
// rows, solves the equality-constrained KKT system, and keeps the best
// candidate that is primal feasible with nonnegative multipliers.
bool brute_force(const DenseQP& qp, Eigen::VectorXd& best_x, double& best_obj) {
  Eigen::MatrixXd C;
  Eigen::VectorXd d;
  letac::expand_rows(qp, C, d);
  const int n = static_cast<int>(qp.H.rows());
  const int r = static_cast<int>(C.rows());
  bool found = false;
  best_obj = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << r); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < r; ++i) {
      if (mask & (1u << i)) act.push_back(i);
    }
    const int m = static_cast<int>(act.size());
    if (m > n) continue;
    Eigen::MatrixXd K(n + m, n + m);
    K.setZero();
    K.topLeftCorner(n, n) = qp.H;
    Eigen::VectorXd rhs(n + m);
    rhs.head(n) = -qp.q;
    for (int j = 0; j < m; ++j) {
      K.block(n + j, 0, 1, n) = C.row(act[j]);
      K.block(0, n + j, n, 1) = C.row(act[j]).transpose();
      rhs(n + j) = d(act[j]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    const Eigen::VectorXd lambda = sol.tail(m);
    if (m > 0 && lambda.minCoeff() < -1e-9) continue;
    if (r > 0 && ((C * x - d).array() > 1e-9).any()) continue;
    const double obj = objective(qp, x);
    if (obj < best_obj - 1e-12) {
      best_obj = obj;
      best_x = x;
      found = true;
    }
  }
  return found;
}

DenseQP random_qp(Rng& rng, int n, bool with_affine) {
  DenseQP qp;
  Eigen::MatrixXd L(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) L(i, j) = j <= i ? rng.normal() : 0.0;
  }
  qp.H = L * L.transpose() + 0.3 * Eigen::MatrixXd::Identity(n, n);
  qp.q.resize(n);
  for (int i = 0; i < n; ++i) qp.q(i) = 2.0 * rng.normal();
  // Bounds straddle a random interior point so the feasible set is nonempty.
  Eigen::VectorXd x0(n);
  for (int i = 0; i < n; ++i) x0(i) = rng.normal();
  qp.lb.resize(n);
  qp.ub.resize(n);
  for (int i = 0; i < n; ++i) {
    qp.lb(i) = x0(i) - rng.uniform(0.05, 1.5);
    qp.ub(i) = x0(i) + rng.uniform(0.05, 1.5);
  }
  if (with_affine) {
    const int m = 1 + static_cast<int>(rng.below(2));
    qp.G.resize(m, n);
    qp.glo.resize(m);
    qp.ghi.resize(m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) qp.G(i, j) = rng.normal();
      const double mid = qp.G.row(i).dot(x0);
      qp.glo(i) = mid - rng.uniform(0.1, 1.0);
      qp.ghi(i) = mid + rng.uniform(0.1, 1.0);
    }
  }
  return qp;
}

}  // namespace

TEST(SolveBox, MatchesBruteForceEnumeration) {
  Rng rng(0x51f15eedULL);
  int solved = 0;
  while (solved < 200) {
    const bool with_affine = rng.uniform01() < 0.5;
    // Keep the expanded row count at or below 12 so the 2^rows reference
    // enumeration stays cheap.
    const int n = 1 + static_cast<int>(rng.below(with_affine ? 4 : 6));
    const DenseQP qp = random_qp(rng, n, with_affine);
    Eigen::VectorXd ref_x;
    double ref_obj = 0.0;
    ASSERT_TRUE(brute_force(qp, ref_x, ref_obj));
    const QPSolution sol = letac::solve_box(qp);
    EXPECT_LE(std::abs(objective(qp, sol.x) - ref_obj),
              1e-8 * std::max(1.0, std::abs(ref_obj)))
        << "objective mismatch at instance " << solved;
    EXPECT_LE(sol.kkt_residual, 1e-7);
    ++solved;
  }
}

TEST(SolveBox, UnconstrainedEqualsLinearSolve) {
  Rng rng(0xabcdefULL);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform(0.0, 6.0));
    Eigen::MatrixXd L(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) L(i, j) = j <= i ? rng.normal() : 0.0;
    }
    DenseQP qp;
    qp.H = L * L.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
    qp.q.resize(n);
    for (int i = 0; i < n; ++i) qp.q(i) = rng.normal();
    const Eigen::VectorXd direct = qp.H.ldlt().solve(-qp.q);
    const QPSolution boxed = letac::solve_box(qp);
    const QPSolution uncon = letac::solve_unconstrained(qp.H, qp.q);
    EXPECT_LT((boxed.x - direct).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((uncon.x - direct).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SolveBox, ActiveBoundClampsSolution) {
  // min 1/2 x^2 - 10 x subject to x <= 2 pins x at the upper bound with
  // multiplier 10 - 2 = 8.
  DenseQP qp;
  qp.H = Eigen::MatrixXd::Constant(1, 1, 1.0);
  qp.q = Eigen::VectorXd::Constant(1, -10.0);
  qp.lb = Eigen::VectorXd::Constant(1, -100.0);
  qp.ub = Eigen::VectorXd::Constant(1, 2.0);
  const QPSolution sol = letac::solve_box(qp);
  EXPECT_NEAR(sol.x(0), 2.0, 1e-12);
  ASSERT_EQ(sol.multipliers.size(), 2);
  EXPECT_NEAR(sol.multipliers(1), 8.0, 1e-10);
  EXPECT_NEAR(sol.multipliers(0), 0.0, 1e-12);
}

TEST(SolveBox, InfeasibleAffineRowsThrow) {
  // Two affine rows demand x >= 1 and x <= -1 simultaneously.
  DenseQP qp;
  qp.H = Eigen::MatrixXd::Identity(1, 1);
  qp.q = Eigen::VectorXd::Zero(1);
  qp.G.resize(2, 1);
  qp.G << 1.0, 1.0;
  qp.glo.resize(2);
  qp.ghi.resize(2);
  qp.glo << 1.0, -std::numeric_limits<double>::infinity();
  qp.ghi << std::numeric_limits<double>::infinity(), -1.0;
  EXPECT_THROW(letac::solve_box(qp), letac::QpInfeasibleError);
}

TEST(SolveBox, IndefiniteHessianThrows) {
  DenseQP qp;
  qp.H = -Eigen::MatrixXd::Identity(2, 2);
  qp.q = Eigen::VectorXd::Ones(2);
  EXPECT_THROW(letac::solve_box(qp), letac::QpNotSpdError);
  EXPECT_THROW(letac::solve_unconstrained(qp.H, qp.q), letac::QpNotSpdError);
}

TEST(SolveBatch, RecordsPerIndexFailuresWithoutAborting) {
  DenseQP good;
  good.H = Eigen::MatrixXd::Identity(2, 2);
  good.q = Eigen::VectorXd::Constant(2, -1.0);
  DenseQP bad;
  bad.H = -Eigen::MatrixXd::Identity(2, 2);
  bad.q = Eigen::VectorXd::Ones(2);
  const auto results = letac::solve_batch({good, bad, good});
  ASSERT_EQ(results.size(), 3u);
  EXPECT_EQ(results[0].solution.status, letac::SolveStatus::ok);
  EXPECT_EQ(results[1].solution.status, letac::SolveStatus::not_spd);
  EXPECT_EQ(results[2].solution.status, letac::SolveStatus::ok);
  EXPECT_LT((results[0].solution.x - Eigen::VectorXd::Ones(2)).norm(), 1e-10);
}

TEST(ExpandRows, OrdersBoundsThenAffineSides) {
  DenseQP qp;
  qp.H = Eigen::MatrixXd::Identity(2, 2);
  qp.q = Eigen::VectorXd::Zero(2);
  qp.lb.resize(2);
  qp.ub.resize(2);
  qp.lb << -1.0, -std::numeric_limits<double>::infinity();
  qp.ub << 2.0, 3.0;
  qp.G.resize(1, 2);
  qp.G << 1.0, -1.0;
  qp.glo = Eigen::VectorXd::Constant(1, -5.0);
  qp.ghi = Eigen::VectorXd::Constant(1, 5.0);
  Eigen::MatrixXd C;
  Eigen::VectorXd d;
  letac::expand_rows(qp, C, d);
  // Finite rows: (-x0 <= 1), (x0 <= 2), (x1 <= 3), (-Gx <= 5), (Gx <= 5).
  ASSERT_EQ(C.rows(), 5);
  EXPECT_DOUBLE_EQ(C(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(d(0), 1.0);
  EXPECT_DOUBLE_EQ(C(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(d(1), 2.0);
  EXPECT_DOUBLE_EQ(C(2, 1), 1.0);
  EXPECT_DOUBLE_EQ(d(2), 3.0);
  EXPECT_DOUBLE_EQ(C(3, 0), -1.0);
  EXPECT_DOUBLE_EQ(C(3, 1), 1.0);
  EXPECT_DOUBLE_EQ(d(3), 5.0);
  EXPECT_DOUBLE_EQ(C(4, 0), 1.0);
  EXPECT_DOUBLE_EQ(C(4, 1), -1.0);
  EXPECT_DOUBLE_EQ(d(4), 5.0);
}
