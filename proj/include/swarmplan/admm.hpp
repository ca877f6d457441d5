#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <vector>

#include "swarmplan/arena.hpp"
#include "swarmplan/model.hpp"

namespace swarmplan {

class QcqpSolver;

// One agent's planned motion over the receding horizon: K+1 states at the
// knots and K piecewise-constant inputs between them.
struct KnotTrajectory {
  double dt = 0.1;
  std::vector<AgentState> states;
  std::vector<ControlInput> inputs;

  int horizon() const { return static_cast<int>(inputs.size()); }
};

// Consensus engine configuration. The two named presets trade iteration
// count against penalty weight: many cheap rounds with a strong penalty,
// or a single round with a weak one.
struct AdmmConfig {
  int m = 20;        // consensus rounds per control step
  int m_pre = 50;    // hot-start rounds before the first step
  double mu = 40.0;  // consensus penalty weight
  Eigen::Matrix4d Q;
  Eigen::Matrix2d Rw;
  double dt = 0.1;
  int K = 10;  // horizon knots; T_f = K dt

  AdmmConfig();

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

AdmmConfig admm_preset_m1();
AdmmConfig admm_preset_m20();

// An agent's local copies of positions and the matching duals: one copy of
// its own path (z_self) and one of every other agent's path (z_other[j]).
// z_other[self] stays empty. All knot vectors hold K+1 entries.
struct ConsensusSet {
  std::vector<Eigen::Vector2d> z_self;
  std::vector<Eigen::Vector2d> lam_self;
  std::vector<std::vector<Eigen::Vector2d>> z_other;
  std::vector<std::vector<Eigen::Vector2d>> lam_other;
};

struct BoardStamp {
  int mpc_step = 0;
  int iter = 0;
  int phase = 0;
};

// Everything one agent publishes for the others to read. Within a round,
// phase 1 writes p (and the trajectory behind it) while reading only
// consensus data, and phase 2 writes consensus data while reading only p,
// so agents never race on a slot.
struct AgentSlot {
  std::vector<Eigen::Vector2d> p;
  KnotTrajectory traj;
  ConsensusSet cs;
  BoardStamp p_stamp;
  BoardStamp z_stamp;
};

struct SharedBoard {
  std::vector<AgentSlot> agents;
  int mpc_step = 0;
  int iter = 0;

  int num_agents() const { return static_cast<int>(agents.size()); }
};

// Per-agent planning inputs for one control step. The rectangle, when
// present, bounds every future knot position (the active corridor).
struct AgentTask {
  AgentState x0;
  AgentState target;
  std::optional<Rect> rect;
};

// Board with zero duals and straight-line position copies from each start
// to its target, the documented cold start.
SharedBoard init_board(const std::vector<AgentTask>& tasks, const AdmmConfig& cfg);

// Tracking problem for one agent: quadratic target and input costs plus the
// penalty terms pulling its path toward every published copy of it, subject
// to its own dynamics, speed and acceleration limits, and the rectangle.
// Solved as one convex QCQP over all knot states and inputs. When `reuse`
// is given, the factorisation inside it is kept across calls; the pointee
// is created on first use. Throws std::runtime_error if the solve fails.
KnotTrajectory x_update(int agent_id, const AgentState& x0, const AgentState& target,
                        const SharedBoard& board, const AdmmConfig& cfg,
                        const AgentParams& params, const Rect* rect = nullptr,
                        std::unique_ptr<QcqpSolver>* reuse = nullptr);

// Collision correction of the published paths: per knot, repeatedly applies
// the equal-split pair projection (nearest pair first, ties by id; coincident
// points separate along +x, then +y) until a sweep moves nothing by more
// than 1e-9 or 50 sweeps pass. Every returned pair of copies is at least the
// minimum separation apart, minus that sweep tolerance.
ConsensusSet z_update(int agent_id, const SharedBoard& board, const AdmmConfig& cfg,
                      const AgentParams& params);

// Dual ascent against the agent's freshly published copies. Returns the
// full consensus set with only the duals advanced.
ConsensusSet dual_update(int agent_id, const SharedBoard& board, const AdmmConfig& cfg);

struct RoundStats {
  std::vector<double> x_seconds;
  std::vector<double> z_seconds;
  double primal_residual = 0.0;  // max over agents and knots of |p - z_self|
};

// One bulk-synchronous round: every agent solves its tracking problem and
// publishes p, then every agent corrects copies and advances duals. Reads
// within a phase only touch the previous phase's publications.
void admm_round(const std::vector<AgentTask>& tasks, SharedBoard& board, const AdmmConfig& cfg,
                const AgentParams& params,
                std::vector<std::unique_ptr<QcqpSolver>>* solvers = nullptr,
                RoundStats* stats = nullptr);

// Hot start: m_pre rounds before any time advances, warming copies and duals.
void pre_iterate(const std::vector<AgentTask>& tasks, SharedBoard& board, const AdmmConfig& cfg,
                 const AgentParams& params,
                 std::vector<std::unique_ptr<QcqpSolver>>* solvers = nullptr);

// Advance the board one control period: every copy and dual moves to the
// previous knot index, the final knot is duplicated.
void shift_board(SharedBoard& board);

double consensus_residual(const SharedBoard& board);

}  // namespace swarmplan
