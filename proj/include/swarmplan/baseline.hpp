#pragma once

#include <Eigen/Dense>
#include <limits>
#include <memory>
#include <vector>

#include "swarmplan/admm.hpp"
#include "swarmplan/arena.hpp"
#include "swarmplan/model.hpp"

namespace swarmplan {

class QcqpSolver;

// Weights and tolerances for the centralised comparison planner. The
// tracking weights default to the same values the consensus planner uses;
// the separation margin is wider (30 mm instead of 5 mm) because the
// centralised method has no safety filter behind it.
struct CentralConfig {
  Eigen::Matrix4d Q;
  Eigen::Matrix2d Rw;
  double dt = 0.1;
  int K = 10;
  double eps = 0.03;          // margin added to 2R for pairwise separation
  int max_sqp = 30;           // convexification iterations per step
  double step_tol = 1e-6;     // infinity-norm step size declaring convergence
  double merit_weight = 1e4;  // violation weight in the line-search merit

  CentralConfig();  // Q = diag(1,1,0,0), Rw = 1e-4 I
  void validate() const;
};

// One centralised plan over the horizon. The trajectories are always
// dynamics-feasible and inside the input/speed limits; pairwise separation
// holds whenever the convexification converged (converged == true) and is
// re-checked a posteriori either way.
struct CentralPlan {
  std::vector<KnotTrajectory> trajs;
  bool converged = false;
  bool unsafe = false;  // planned knots breach 2R + eps/2 somewhere
  int iterations = 0;
  double objective = 0.0;
  double min_separation = std::numeric_limits<double>::infinity();  // knots 1..K
  std::vector<double> merit_history;  // merit at the start and after each accepted step
};

// Solves the coupled multi-agent tracking problem as one program: quadratic
// tracking objective, per-agent dynamics and limits, optional rectangle
// bounds, and pairwise separation handled by repeated supporting-hyperplane
// convexification around the current iterate. The hyperplanes are elastic,
// penalised at merit_weight, so each subproblem stays feasible even when
// the current iterate's geometry cannot satisfy a row outright; a line
// search on objective + merit_weight * violation keeps the merit
// non-increasing.
// warm_start seeds the first linearisation point; otherwise the stacked
// independent tracking solution is used. A reuse slot keeps the factorised
// problem across MPC steps; the slot is only valid for an unchanged
// (agent count, config, rectangle presence) combination.
//
// Throws std::invalid_argument on shape mismatches. A failed or stalled
// convexification is not an error: the best iterate comes back with
// converged == false and the a-posteriori flags set.
CentralPlan solve_centralized_step(const std::vector<AgentState>& x0s,
                                   const std::vector<AgentState>& targets,
                                   const CentralConfig& cfg, const AgentParams& params,
                                   const Rect* rect = nullptr,
                                   const std::vector<KnotTrajectory>* warm_start = nullptr,
                                   std::unique_ptr<QcqpSolver>* reuse = nullptr);

}  // namespace swarmplan
