#pragma once

#include <Eigen/Dense>
#include <vector>

#include "swarmplan/arena.hpp"
#include "swarmplan/model.hpp"

namespace swarmplan {

// Gains and knobs of the centralised safety filter. The pairwise
// condition enforced on the current inputs is
//   hddot + (K1 + K2) hdot + K1 K2 h >= 0
// with h the squared clearance between two agents.
struct FilterConfig {
  double K1 = 8.0;           // 1/s
  double K2 = 7.0;           // 1/s
  double a_peak = 8.0;       // m/s^2, hard cap on filtered inputs
  double soft_penalty = 1e6;  // weight on squared slack in the fallback
  double dt = 0.1;           // s, control period (used for arena bounds)

  void validate() const;
};

// Pairwise barrier pieces at the current instant. hddot is affine in the
// two inputs: hddot = c0 + ci . u_i + cj . u_j, with ci = -cj = 2(p_i-p_j)
// and c0 = 2 |v_i - v_j|^2.
struct PairBarrier {
  int i = 0, j = 0;
  double h = 0.0;     // m^2
  double hdot = 0.0;  // m^2/s
  double c0 = 0.0;    // m^2/s^2
  Eigen::Vector2d ci{0.0, 0.0};
  Eigen::Vector2d cj{0.0, 0.0};
};

// squared clearance |p_i - p_j|^2 - (2R + eps)^2
double barrier_value(const Eigen::Vector2d& p_i, const Eigen::Vector2d& p_j,
                     const AgentParams& params);

struct BarrierRates {
  double hdot = 0.0;
  double c0 = 0.0;
  Eigen::Vector2d ci{0.0, 0.0};
  Eigen::Vector2d cj{0.0, 0.0};
};

BarrierRates barrier_rates(const AgentState& xi, const AgentState& xj);

// the input-independent part of the filter condition for one pair
double condition_constant(const PairBarrier& pb, const FilterConfig& cfg);

// One barrier per unordered pair, every pair included (distant pairs are
// cheap to keep and pruned later inside the filter).
std::vector<PairBarrier> assemble_constraints(const std::vector<AgentState>& states,
                                              const AgentParams& params);

struct FilterReport {
  bool active = false;      // some input was changed
  bool soft = false;        // hard problem infeasible, slack fallback used
  double correction = 0.0;  // sum of |u_i - u_i*| over agents
  double max_slack = 0.0;   // largest slack value in soft mode
  int pairs_kept = 0;       // barrier rows that survived pruning
};

// Minimally corrects the desired inputs so that every pair condition,
// the per-agent peak-acceleration ball and the optional per-agent arena
// input box hold. arena_bounds is either empty or one entry per agent.
// Solved centrally as one convex QCQP; on infeasibility the pair and
// arena rows get nonnegative slacks (the acceleration ball stays hard).
std::vector<ControlInput> safety_filter(const std::vector<ControlInput>& u_star,
                                        const std::vector<AgentState>& states,
                                        const AgentParams& params, const FilterConfig& cfg,
                                        const std::vector<InputBounds>& arena_bounds = {},
                                        FilterReport* report = nullptr);

}  // namespace swarmplan
