#pragma once

// Internal helpers shared by the trajectory planners. Both the consensus
// X-update and the centralised baseline stack one agent block per agent:
// states at 6k, inputs at 6k+4 within the block, n_block = 6K+4.

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "swarmplan/arena.hpp"
#include "swarmplan/model.hpp"

namespace swarmplan::detail {

inline int state_off(int k) { return 6 * k; }
inline int input_off(int k) { return 6 * k + 4; }

inline double relaxed_speed_limit(double v0_norm, int k, double dt,
                                  const AgentParams& params) {
  // the safety filter may hand back a state faster than v_max (its peak
  // ball is wider than a_max); grant early knots a decaying allowance so
  // braking at a_max keeps the problem feasible
  return std::max(params.v_max, v0_norm - 0.95 * k * params.a_max * dt);
}

// Positions of the hardest admissible brake from x0, one entry per knot
// k=1..K. Any rectangle bound relaxed to contain this path keeps the
// planning problem feasible no matter how x0 arrives.
inline std::vector<Eigen::Vector2d> brake_path(const AgentState& x0, double dt, int K,
                                               const AgentParams& params) {
  const DiscreteDynamics dyn = discretize(dt);
  std::vector<Eigen::Vector2d> out;
  AgentState w = x0;
  for (int k = 1; k <= K; ++k) {
    const Eigen::Vector2d v = w.vel();
    ControlInput u;
    if (v.norm() > params.a_max * dt)
      u = ControlInput::from_vec(-params.a_max * v.normalized());
    else
      u = ControlInput::from_vec(-v / dt);
    w = step(w, u, dyn);
    out.push_back(w.pos());
  }
  return out;
}

// Right-hand sides for the per-knot rectangle rows (+x, -x, +y, -y for
// k=1..K), each relaxed by the running worst excursion of the brake path.
inline Eigen::VectorXd arena_rhs(const Rect& shrunk, const AgentState& x0, double dt,
                                 int K, const AgentParams& params) {
  const std::vector<Eigen::Vector2d> wp = brake_path(x0, dt, K, params);
  Eigen::VectorXd rhs(4 * K);
  double hix = -std::numeric_limits<double>::infinity(), lox = hix, hiy = hix, loy = hix;
  for (int k = 1; k <= K; ++k) {
    const Eigen::Vector2d& w = wp[static_cast<size_t>(k - 1)];
    hix = std::max(hix, w.x() - shrunk.xmax);
    lox = std::max(lox, shrunk.xmin - w.x());
    hiy = std::max(hiy, w.y() - shrunk.ymax);
    loy = std::max(loy, shrunk.ymin - w.y());
    const int r = 4 * (k - 1);
    rhs(r + 0) = shrunk.xmax + std::max(0.0, hix);
    rhs(r + 1) = -(shrunk.xmin - std::max(0.0, lox));
    rhs(r + 2) = shrunk.ymax + std::max(0.0, hiy);
    rhs(r + 3) = -(shrunk.ymin - std::max(0.0, loy));
  }
  return rhs;
}

}  // namespace swarmplan::detail
