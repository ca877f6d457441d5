#pragma once

#include <Eigen/Dense>
#include <limits>
#include <memory>
#include <vector>

namespace swarmplan {

// Ball constraint ||x(idx) - center||_2 <= radius over a subset of the
// decision variables.
struct BallConstraint {
  std::vector<int> idx;
  Eigen::VectorXd center;
  double radius = 0.0;
};

// Dense convex QCQP
//
//   min  0.5 x'Hx + g'x
//   s.t. eqA x = eqb
//        inA x <= inb
//        ||x(S_b) - c_b|| <= r_b   for every ball b
//
// H must be symmetric positive semidefinite.
struct DenseQcqp {
  int n = 0;
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd eqA;
  Eigen::VectorXd eqb;
  Eigen::MatrixXd inA;
  Eigen::VectorXd inb;
  std::vector<BallConstraint> balls;

  // Shape and symmetry checks plus (for small n) a PSD eigenvalue check.
  // Throws std::invalid_argument.
  void validate() const;
};

enum class SolveStatus { optimal, max_iter, infeasible };

const char* to_string(SolveStatus s);

// KKT residual conventions: stationarity is the 2-norm of
//   Hx + g + eqA'lam + inA'nu + sum_b mu_b * 2(x(S_b) - c_b),
// i.e. ball multipliers are reported against the squared-form gradient.
// Feasibility is the max of |eqA x - eqb|, positive parts of inA x - inb
// and positive parts of ||x(S_b)-c_b||^2 - r_b^2. Complementarity is the
// max of |nu_j (inA_j x - inb_j)| and |mu_b (||x-c||^2 - r^2)|.
struct SolveReport {
  Eigen::VectorXd x;
  SolveStatus status = SolveStatus::infeasible;
  double kkt_stationarity = std::numeric_limits<double>::infinity();
  double kkt_feasibility = std::numeric_limits<double>::infinity();
  double kkt_complementarity = std::numeric_limits<double>::infinity();
  int iterations = 0;
  Eigen::VectorXd eq_dual;
  Eigen::VectorXd in_dual;
  Eigen::VectorXd ball_dual;
};

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

// Working set carried between successive solves of structurally identical
// problems (e.g. across MPC steps).
struct QcqpWarmStart {
  std::vector<int> rows;  // indices into [inA rows..., ball cut slots...]
};

// Euclidean projection onto the ball ||x - c|| <= r.
Eigen::VectorXd project_ball(const Eigen::VectorXd& x, const Eigen::VectorXd& c, double r);

// Equality constrained QP via one (symmetric indefinite) KKT solve.
// Singular KKT reports status infeasible.
SolveReport solve_eq_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                        const Eigen::MatrixXd& eqA, const Eigen::VectorXd& eqb);

SolveReport solve_convex_qcqp(const DenseQcqp& p, const SolveOptions& opts = {},
                              QcqpWarmStart* warm = nullptr);

// Reusable solver for repeated solves of one problem structure. The
// factorisation of the equality KKT system is split along connected
// components of the coupling graph and kept across calls, so edits that
// only touch g, eqb, inequality rows or ball radii are cheap. Edits to H
// or eqA require a new instance.
class QcqpSolver {
 public:
  explicit QcqpSolver(DenseQcqp p, SolveOptions opts = {});
  ~QcqpSolver();
  QcqpSolver(QcqpSolver&&) noexcept;
  QcqpSolver& operator=(QcqpSolver&&) noexcept;

  void set_gradient(const Eigen::VectorXd& g);
  void set_eq_rhs(const Eigen::VectorXd& eqb);
  void set_ineq_row(int row, const Eigen::RowVectorXd& a, double b);
  void set_ineq_rhs(int row, double b);
  void set_ball(int id, const Eigen::VectorXd& center, double radius);

  const DenseQcqp& problem() const;

  SolveReport solve();
  void reset_warm_start();
  void set_warm_rows(const std::vector<int>& rows);
  std::vector<int> working_set() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace swarmplan
