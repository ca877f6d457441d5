#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "swarmplan/admm.hpp"
#include "swarmplan/arena.hpp"
#include "swarmplan/hocbf.hpp"
#include "swarmplan/model.hpp"

namespace swarmplan {

enum class Method { admm_hocbf, centralized };

const char* to_string(Method m);

struct ScenarioAgent {
  AgentState x0;
  AgentState target;
};

// Full description of one closed-loop episode. The horizon and weights live
// in the consensus config (the centralised method borrows Q, Rw, dt and K
// from there so both methods optimise the same objective); the seed only
// identifies the sampled instance, the episode itself is deterministic.
struct Scenario {
  std::vector<ScenarioAgent> agents;
  AgentParams params;
  std::vector<Rect> arena;  // empty: unbounded workspace
  Method method = Method::admm_hocbf;
  AdmmConfig admm;
  FilterConfig filter;
  double max_sim_time = 30.0;  // simulated seconds before a timeout
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field. Checks the
  // configs, pairwise start separation, that starts and targets lie inside
  // some corridor's shrunk bounds, and that the centralised method is not
  // asked to run a multi-corridor arena (its stacked program binds one
  // rectangle for all agents).
  void validate() const;
};

// One control period of the closed loop. states holds the agents at the
// START of the step; u_star the planners' first-knot inputs; u what was
// applied after filtering (identical for the centralised method). Timing
// is wall clock: agent_seconds attributes planning work to each agent as
// if they ran in parallel, step_seconds is the slowest agent plus the
// filter.
struct StepRecord {
  int step = 0;
  std::vector<AgentState> states;
  std::vector<int> corridor;  // active corridor per agent; empty without arena
  std::vector<ControlInput> u_star;
  std::vector<ControlInput> u;
  bool filter_active = false;  // some agent's input moved by more than 1e-9
  double correction = 0.0;     // max over agents of |u - u_star|
  std::vector<double> agent_seconds;
  double filter_seconds = 0.0;
  double step_seconds = 0.0;
  std::vector<double> residuals;  // consensus residual after each round
};

struct EpisodeSummary {
  bool arrived = false;
  bool timeout = false;
  int steps = 0;
  double transit_time = 0.0;  // simulated seconds until every agent arrived
  double avg_compute_seconds = 0.0;
  int collision_count = 0;  // knots where some pair overlaps physically (2R)
  double min_distance = std::numeric_limits<double>::infinity();
  double activity_percent = 0.0;  // share of steps with the filter active
  double avg_correction = 0.0;    // mean correction over the active steps
  // share of steps whose within-step residual sequence trends down (median
  // of the later half at most that of the first half); steps with fewer
  // than two rounds count as trivially monotone
  double residual_trend_fraction = 1.0;
};

// Everything one episode produced. The summary is recomputed from the step
// rows by compute_metrics, never accumulated separately.
struct EpisodeLog {
  Scenario scenario;
  std::vector<StepRecord> steps;
  std::vector<AgentState> final_states;
  EpisodeSummary summary;
};

// Runs the closed loop until every agent satisfies |x - x_f|^2 < 1e-3 or
// the simulated clock passes max_sim_time (timeout is flagged, not fatal).
// The consensus method hot-starts with m_pre rounds, then per step runs m
// rounds, safety-filters the first-knot inputs (with arena input boxes when
// corridors are present), steps every agent and advances its corridor leg.
// The centralised method plans with the previous solution, shifted one
// knot, as warm start. Solver failures propagate as exceptions.
EpisodeLog run_episode(const Scenario& s);

struct CollisionReport {
  int count = 0;  // knots (time instants) with some pair closer than 2R
  double min_distance = std::numeric_limits<double>::infinity();
};

// Physical-overlap count over the executed states, margin excluded: the
// buffer eps is a planning margin, contact is at 2R.
CollisionReport collision_check(const EpisodeLog& log, const AgentParams& params);

// Summary statistics of a finished episode; pure function of the log.
EpisodeSummary compute_metrics(const EpisodeLog& log);

}  // namespace swarmplan
