#include "swarmplan/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "swarmplan/baseline.hpp"
#include "swarmplan/log.hpp"
#include "swarmplan/qsolve.hpp"

namespace swarmplan {

const char* to_string(Method m) {
  switch (m) {
    case Method::admm_hocbf: return "admm_hocbf";
    case Method::centralized: return "centralized";
  }
  return "?";
}

void Scenario::validate() const {
  params.validate();
  admm.validate();
  filter.validate();
  if (agents.empty()) throw std::invalid_argument("scenario.agents must be nonempty");
  if (!(max_sim_time > 0.0) || !std::isfinite(max_sim_time))
    throw std::invalid_argument("scenario.max_sim_time must be > 0");
  if (filter.dt != admm.dt)
    throw std::invalid_argument("scenario.filter.dt must equal the planning dt");

  const double d = params.min_separation();
  for (size_t i = 0; i < agents.size(); ++i)
    for (size_t j = i + 1; j < agents.size(); ++j)
      if ((agents[i].x0.pos() - agents[j].x0.pos()).norm() < d - 1e-12)
        throw std::invalid_argument(
            "scenario.agents: starts closer than the minimum separation");

  if (method == Method::centralized && arena.size() > 1)
    throw std::invalid_argument(
        "scenario.method: centralized supports at most one arena rectangle");
  if (!arena.empty()) {
    const CorridorMap map = build_corridor_map(arena, params);
    for (size_t i = 0; i < agents.size(); ++i) {
      if (map.corridors_containing(agents[i].x0.pos(), params).empty())
        throw std::invalid_argument("scenario.agents[" + std::to_string(i) +
                                    "].start lies outside every corridor");
      if (map.corridors_containing(agents[i].target.pos(), params).empty())
        throw std::invalid_argument("scenario.agents[" + std::to_string(i) +
                                    "].target lies outside every corridor");
    }
  }
}

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

KnotTrajectory shift_traj(KnotTrajectory t) {
  for (size_t k = 0; k + 1 < t.states.size(); ++k) t.states[k] = t.states[k + 1];
  for (size_t k = 0; k + 1 < t.inputs.size(); ++k) t.inputs[k] = t.inputs[k + 1];
  return t;
}

// Tracked target of one agent: the current sub-target (at rest) until the
// final leg, then the true target state.
AgentState leg_target(const Scenario& s, const std::vector<SubTargetPlan>& plans, int i) {
  if (plans.empty() || plans[static_cast<size_t>(i)].on_final_leg())
    return s.agents[static_cast<size_t>(i)].target;
  const Eigen::Vector2d& q = plans[static_cast<size_t>(i)].current_target();
  return {q.x(), q.y(), 0.0, 0.0};
}

}  // namespace

EpisodeLog run_episode(const Scenario& s) {
  s.validate();
  const int N = static_cast<int>(s.agents.size());
  const double dt = s.admm.dt;
  const DiscreteDynamics dyn = discretize(dt);

  CorridorMap map;
  std::vector<SubTargetPlan> plans;
  if (!s.arena.empty()) {
    map = build_corridor_map(s.arena, s.params);
    for (const ScenarioAgent& a : s.agents)
      plans.push_back(plan_subtargets(map, a.x0.pos(), a.target.pos(), s.params));
  }

  EpisodeLog log;
  log.scenario = s;

  std::vector<AgentState> states;
  for (const ScenarioAgent& a : s.agents) states.push_back(a.x0);

  const auto make_tasks = [&]() {
    std::vector<AgentTask> tasks(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
      AgentTask& t = tasks[static_cast<size_t>(i)];
      t.x0 = states[static_cast<size_t>(i)];
      t.target = leg_target(s, plans, i);
      if (!plans.empty())
        t.rect = map.corridors[static_cast<size_t>(
            plans[static_cast<size_t>(i)].active_corridor())];
    }
    return tasks;
  };

  // consensus state (admm_hocbf) and warm plan (centralized), both lazy
  SharedBoard board;
  std::vector<std::unique_ptr<QcqpSolver>> solvers(static_cast<size_t>(N));
  std::unique_ptr<QcqpSolver> central_reuse;
  std::vector<KnotTrajectory> central_warm;
  CentralConfig central_cfg;
  central_cfg.Q = s.admm.Q;
  central_cfg.Rw = s.admm.Rw;
  central_cfg.dt = dt;
  central_cfg.K = s.admm.K;

  bool arrived = false;
  for (int t = 0;; ++t) {
    arrived = true;
    for (int i = 0; i < N; ++i)
      arrived = arrived && (states[static_cast<size_t>(i)].vec() -
                            s.agents[static_cast<size_t>(i)].target.vec())
                                   .squaredNorm() < 1e-3;
    if (arrived) break;
    if (t * dt >= s.max_sim_time) break;

    StepRecord rec;
    rec.step = t;
    rec.states = states;
    for (const SubTargetPlan& plan : plans) rec.corridor.push_back(plan.active_corridor());
    rec.agent_seconds.assign(static_cast<size_t>(N), 0.0);

    if (s.method == Method::admm_hocbf) {
      const std::vector<AgentTask> tasks = make_tasks();
      if (t == 0) {
        board = init_board(tasks, s.admm);
        pre_iterate(tasks, board, s.admm, s.params, &solvers);
      }
      RoundStats stats;
      for (int r = 0; r < s.admm.m; ++r) {
        admm_round(tasks, board, s.admm, s.params, &solvers, &stats);
        for (int i = 0; i < N; ++i)
          rec.agent_seconds[static_cast<size_t>(i)] +=
              stats.x_seconds[static_cast<size_t>(i)] +
              stats.z_seconds[static_cast<size_t>(i)];
        rec.residuals.push_back(stats.primal_residual);
      }
      for (int i = 0; i < N; ++i)
        rec.u_star.push_back(board.agents[static_cast<size_t>(i)].traj.inputs[0]);

      std::vector<InputBounds> arena_bounds;
      if (!plans.empty())
        for (int i = 0; i < N; ++i)
          arena_bounds.push_back(input_space_bounds(
              states[static_cast<size_t>(i)],
              shrink_rect(map.corridors[static_cast<size_t>(
                              plans[static_cast<size_t>(i)].active_corridor())],
                          s.params),
              s.params, dt));
      const auto t0 = std::chrono::steady_clock::now();
      rec.u = safety_filter(rec.u_star, states, s.params, s.filter, arena_bounds);
      rec.filter_seconds = seconds_since(t0);
    } else {
      std::vector<AgentState> x0s = states;
      std::vector<AgentState> targets;
      for (int i = 0; i < N; ++i) targets.push_back(leg_target(s, plans, i));
      const Rect* rect = s.arena.empty() ? nullptr : &s.arena[0];
      const auto t0 = std::chrono::steady_clock::now();
      const CentralPlan plan = solve_centralized_step(
          x0s, targets, central_cfg, s.params, rect,
          central_warm.empty() ? nullptr : &central_warm, &central_reuse);
      const double solve_seconds = seconds_since(t0);
      rec.agent_seconds.assign(static_cast<size_t>(N), solve_seconds);
      for (int i = 0; i < N; ++i) rec.u_star.push_back(plan.trajs[static_cast<size_t>(i)].inputs[0]);
      rec.u = rec.u_star;
      central_warm.clear();
      for (const KnotTrajectory& tr : plan.trajs) central_warm.push_back(shift_traj(tr));
    }

    rec.correction = 0.0;
    for (int i = 0; i < N; ++i)
      rec.correction = std::max(rec.correction, (rec.u[static_cast<size_t>(i)].vec() -
                                                 rec.u_star[static_cast<size_t>(i)].vec())
                                                    .norm());
    rec.filter_active = rec.correction > 1e-9;
    rec.step_seconds =
        *std::max_element(rec.agent_seconds.begin(), rec.agent_seconds.end()) +
        rec.filter_seconds;

    for (int i = 0; i < N; ++i)
      states[static_cast<size_t>(i)] =
          step(states[static_cast<size_t>(i)], rec.u[static_cast<size_t>(i)], dyn);
    for (size_t i = 0; i < plans.size(); ++i)
      advance_plan(plans[i], states[i].pos(), map, s.params);
    if (s.method == Method::admm_hocbf) shift_board(board);

    log.steps.push_back(std::move(rec));
  }

  log.final_states = states;
  log.summary = compute_metrics(log);
  SWARMPLAN_LOG_INFO("episode " + std::string(to_string(s.method)) + ": " +
                     std::to_string(log.summary.steps) + " steps, " +
                     (log.summary.arrived ? "arrived" : "timeout"));
  return log;
}

CollisionReport collision_check(const EpisodeLog& log, const AgentParams& params) {
  CollisionReport rep;
  const double contact = 2.0 * params.R;
  const auto scan = [&](const std::vector<AgentState>& states) {
    double knot_min = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < states.size(); ++i)
      for (size_t j = i + 1; j < states.size(); ++j)
        knot_min = std::min(knot_min, (states[i].pos() - states[j].pos()).norm());
    rep.min_distance = std::min(rep.min_distance, knot_min);
    if (knot_min < contact) ++rep.count;
  };
  for (const StepRecord& rec : log.steps) scan(rec.states);
  scan(log.final_states);
  return rep;
}

EpisodeSummary compute_metrics(const EpisodeLog& log) {
  EpisodeSummary m;
  m.steps = static_cast<int>(log.steps.size());
  m.transit_time = m.steps * log.scenario.admm.dt;

  m.arrived = !log.final_states.empty();
  for (size_t i = 0; i < log.final_states.size(); ++i)
    m.arrived = m.arrived && (log.final_states[i].vec() -
                              log.scenario.agents[i].target.vec())
                                     .squaredNorm() < 1e-3;
  m.timeout = !m.arrived;

  const CollisionReport col = collision_check(log, log.scenario.params);
  m.collision_count = col.count;
  m.min_distance = col.min_distance;

  if (m.steps == 0) return m;

  int active = 0, trending = 0;
  double correction_sum = 0.0, seconds_sum = 0.0;
  for (const StepRecord& rec : log.steps) {
    seconds_sum += rec.step_seconds;
    if (rec.filter_active) {
      ++active;
      correction_sum += rec.correction;
    }
    if (rec.residuals.size() < 2) {
      ++trending;
    } else {
      const auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const size_t h = v.size() / 2;
        return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
      };
      const size_t half = rec.residuals.size() / 2;
      const std::vector<double> head(rec.residuals.begin(), rec.residuals.begin() + half);
      const std::vector<double> tail(rec.residuals.end() - half, rec.residuals.end());
      if (median(tail) <= median(head)) ++trending;
    }
  }
  m.avg_compute_seconds = seconds_sum / m.steps;
  m.activity_percent = 100.0 * active / m.steps;
  m.avg_correction = active > 0 ? correction_sum / active : 0.0;
  m.residual_trend_fraction = static_cast<double>(trending) / m.steps;
  return m;
}

}  // namespace swarmplan
