#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <random>
#include <vector>

#include "swarmplan/sim.hpp"

using namespace swarmplan;

namespace {

AgentState at(double x, double y) {
  AgentState s;
  s.px = x;
  s.py = y;
  return s;
}

Scenario open_scenario(std::vector<ScenarioAgent> agents, Method method = Method::admm_hocbf) {
  Scenario s;
  s.agents = std::move(agents);
  s.method = method;
  s.admm = admm_preset_m20();
  return s;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (static_cast<double>(rng() >> 11) * 0x1.0p-53) * (hi - lo);
}

// rejection-samples points in a box, pairwise at least min_separation apart
std::vector<Eigen::Vector2d> sample_spread(std::mt19937_64& rng, int n, double lo, double hi,
                                           double sep) {
  std::vector<Eigen::Vector2d> pts;
  while (static_cast<int>(pts.size()) < n) {
    const Eigen::Vector2d q(uniform(rng, lo, hi), uniform(rng, lo, hi));
    bool clear = true;
    for (const Eigen::Vector2d& p : pts) clear = clear && (p - q).norm() >= sep;
    if (clear) pts.push_back(q);
  }
  return pts;
}

// minimal log skeleton for the metric tests: two agents, open workspace
EpisodeLog synthetic_log(const std::vector<std::vector<AgentState>>& knots) {
  EpisodeLog log;
  log.scenario = open_scenario({{at(0.0, 0.0), at(0.0, 0.0)}, {at(1.0, 0.0), at(1.0, 0.0)}});
  for (size_t t = 0; t + 1 < knots.size(); ++t) {
    StepRecord rec;
    rec.step = static_cast<int>(t);
    rec.states = knots[t];
    rec.u_star.resize(knots[t].size());
    rec.u = rec.u_star;
    rec.agent_seconds.assign(knots[t].size(), 0.0);
    log.steps.push_back(rec);
  }
  log.final_states = knots.back();
  return log;
}

}  // namespace

TEST_CASE("a lone agent half a metre out arrives untouched by the filter") {
  const Scenario s = open_scenario({{at(0.0, 0.0), at(0.5, 0.0)}});
  const EpisodeLog log = run_episode(s);

  CHECK(log.summary.arrived);
  CHECK_FALSE(log.summary.timeout);
  REQUIRE(log.steps.size() > 0);
  CHECK((log.final_states[0].vec() - s.agents[0].target.vec()).squaredNorm() < 1e-3);
  CHECK(log.summary.activity_percent == 0.0);
  CHECK(log.summary.avg_correction == 0.0);
  CHECK(log.summary.collision_count == 0);
  CHECK(log.summary.transit_time == doctest::Approx(log.steps.size() * s.admm.dt));
  for (const StepRecord& rec : log.steps) {
    CHECK_FALSE(rec.filter_active);
    CHECK(rec.correction <= 1e-9);  // the filter passes solver roundoff through
  }
}

TEST_CASE("starting on the target is a zero-step episode") {
  const Scenario s = open_scenario({{at(0.2, -0.1), at(0.2, -0.1)}});
  const EpisodeLog log = run_episode(s);

  CHECK(log.summary.arrived);
  CHECK(log.steps.empty());
  CHECK(log.summary.steps == 0);
  CHECK(log.summary.transit_time == 0.0);
  CHECK(log.summary.collision_count == 0);
}

TEST_CASE("five seeded agents with the m=20 preset cross without contact") {
  const AgentParams params;
  std::mt19937_64 rng(20260815u);
  const std::vector<Eigen::Vector2d> starts =
      sample_spread(rng, 5, -0.5, 0.5, params.min_separation());
  const std::vector<Eigen::Vector2d> targets =
      sample_spread(rng, 5, -0.5, 0.5, params.min_separation());

  std::vector<ScenarioAgent> agents;
  for (int i = 0; i < 5; ++i)
    agents.push_back({at(starts[i].x(), starts[i].y()), at(targets[i].x(), targets[i].y())});
  const EpisodeLog log = run_episode(open_scenario(std::move(agents)));

  CHECK(log.summary.arrived);
  CHECK(log.summary.collision_count == 0);
  CHECK(log.summary.min_distance >= 2.0 * params.R);
  // desk-scale band around the reference transit of about three seconds
  CHECK(log.summary.transit_time >= 1.5);
  CHECK(log.summary.transit_time <= 6.0);
  CHECK(log.summary.residual_trend_fraction >= 0.9);
}

TEST_CASE("physical contact is counted per knot, margin excluded") {
  const AgentParams params;
  const double contact = 2.0 * params.R;

  // knot sequence: wide, exactly at contact (not a collision), overlapping
  const EpisodeLog log = synthetic_log({
      {at(0.0, 0.0), at(3.0 * params.R, 0.0)},
      {at(0.0, 0.0), at(contact, 0.0)},
      {at(0.0, 0.0), at(0.15, 0.0)},
      {at(0.0, 0.0), at(3.0 * params.R, 0.0)},
  });
  const CollisionReport rep = collision_check(log, params);

  CHECK(rep.count == 1);
  CHECK(rep.min_distance == doctest::Approx(0.15));

  const EpisodeLog calm = synthetic_log({
      {at(0.0, 0.0), at(3.0 * params.R, 0.0)},
      {at(0.0, 0.0), at(3.0 * params.R, 0.0)},
  });
  CHECK(collision_check(calm, params).count == 0);
}

TEST_CASE("the summary mirrors the step rows") {
  EpisodeLog log = synthetic_log({
      {at(0.0, 0.0), at(1.0, 0.0)},
      {at(0.0, 0.0), at(1.0, 0.0)},
      {at(0.0, 0.0), at(1.0, 0.0)},
      {at(0.0, 0.0), at(1.0, 0.0)},
      {at(0.0, 0.0), at(1.0, 0.0)},
  });
  REQUIRE(log.steps.size() == 4);

  // two active steps at a constant correction, known times, mixed residual
  // trends: down, up, vacuous, flat; hand-computed summary follows
  log.steps[1].filter_active = true;
  log.steps[1].correction = 0.25;
  log.steps[2].filter_active = true;
  log.steps[2].correction = 0.25;
  log.steps[0].step_seconds = 0.010;
  log.steps[1].step_seconds = 0.030;
  log.steps[2].step_seconds = 0.020;
  log.steps[3].step_seconds = 0.020;
  log.steps[0].residuals = {1.0, 0.5};
  log.steps[1].residuals = {0.5, 1.0};
  log.steps[2].residuals = {};
  log.steps[3].residuals = {2.0, 2.0};

  const EpisodeSummary m = compute_metrics(log);
  CHECK(m.steps == 4);
  CHECK(m.activity_percent == doctest::Approx(50.0));
  CHECK(m.avg_correction == doctest::Approx(0.25));
  CHECK(m.avg_compute_seconds == doctest::Approx(0.020));
  CHECK(m.residual_trend_fraction == doctest::Approx(0.75));
  CHECK(m.arrived);  // final knots sit on the targets
  CHECK_FALSE(m.timeout);
}

TEST_CASE("identical scenarios replay to identical logs") {
  std::vector<ScenarioAgent> agents = {{at(-0.4, 0.0), at(0.4, 0.0)},
                                       {at(0.4, 0.05), at(-0.4, -0.05)}};
  const Scenario s = open_scenario(agents);
  const EpisodeLog a = run_episode(s);
  const EpisodeLog b = run_episode(s);

  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t t = 0; t < a.steps.size(); ++t) {
    for (size_t i = 0; i < a.steps[t].states.size(); ++i) {
      CHECK(a.steps[t].states[i].vec() == b.steps[t].states[i].vec());
      CHECK(a.steps[t].u_star[i].vec() == b.steps[t].u_star[i].vec());
      CHECK(a.steps[t].u[i].vec() == b.steps[t].u[i].vec());
    }
    REQUIRE(a.steps[t].residuals.size() == b.steps[t].residuals.size());
    for (size_t r = 0; r < a.steps[t].residuals.size(); ++r)
      CHECK(a.steps[t].residuals[r] == b.steps[t].residuals[r]);
  }
  for (size_t i = 0; i < a.final_states.size(); ++i)
    CHECK(a.final_states[i].vec() == b.final_states[i].vec());

  CHECK(a.summary.arrived);
  CHECK(a.summary.collision_count == 0);
  CHECK(a.summary.residual_trend_fraction >= 0.9);
}

TEST_CASE("a corridor handoff keeps every knot inside its active corridor") {
  const AgentParams params;
  const Rect bottom{0.0, 1.2, 0.0, 0.3};
  const Rect side{0.9, 1.2, 0.0, 1.2};

  Scenario s = open_scenario({{at(0.15, 0.15), at(1.05, 1.05)}});
  s.arena = {bottom, side};
  const EpisodeLog log = run_episode(s);

  CHECK(log.summary.arrived);
  REQUIRE(log.steps.size() > 0);

  bool switched = false;
  int prev = log.steps.front().corridor[0];
  for (const StepRecord& rec : log.steps) {
    REQUIRE(rec.corridor.size() == 1);
    CHECK(rec.corridor[0] >= prev);  // legs only ever advance
    switched = switched || rec.corridor[0] != prev;
    prev = rec.corridor[0];

    const Rect shrunk = shrink_rect(s.arena[static_cast<size_t>(rec.corridor[0])], params);
    CHECK(shrunk.contains(rec.states[0].pos(), 1e-8));
  }
  CHECK(switched);
  CHECK(shrink_rect(side, params).contains(log.final_states[0].pos(), 1e-8));
}

TEST_CASE("a hopeless deadline is flagged as timeout, log intact") {
  Scenario s = open_scenario({{at(0.0, 0.0), at(3.0, 0.0)}});
  s.max_sim_time = 0.3;
  const EpisodeLog log = run_episode(s);

  CHECK_FALSE(log.summary.arrived);
  CHECK(log.summary.timeout);
  CHECK(log.summary.steps == 3);
  CHECK(log.summary.transit_time == doctest::Approx(0.3));
}

TEST_CASE("the centralized method runs the same closed loop") {
  std::vector<ScenarioAgent> agents = {{at(-0.4, 0.0), at(0.4, 0.0)},
                                       {at(0.4, 0.05), at(-0.4, -0.05)}};
  const EpisodeLog log = run_episode(open_scenario(agents, Method::centralized));

  CHECK(log.summary.arrived);
  CHECK(log.summary.collision_count == 0);
  CHECK(log.summary.min_distance >= 2.0 * log.scenario.params.R);
  CHECK(log.summary.activity_percent == 0.0);  // no filter behind the baseline
  for (const StepRecord& rec : log.steps) CHECK(rec.residuals.empty());
}

TEST_CASE("scenario validation names the offending field") {
  Scenario s = open_scenario({{at(0.0, 0.0), at(0.5, 0.0)}, {at(0.05, 0.0), at(1.0, 0.0)}});
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("starts"), std::invalid_argument);

  Scenario two_rects = open_scenario({{at(0.15, 0.15), at(0.5, 0.15)}}, Method::centralized);
  two_rects.arena = {Rect{0.0, 1.2, 0.0, 0.3}, Rect{0.9, 1.2, 0.0, 1.2}};
  CHECK_THROWS_WITH_AS(two_rects.validate(), doctest::Contains("method"),
                       std::invalid_argument);

  Scenario outside = open_scenario({{at(5.0, 5.0), at(0.5, 0.15)}});
  outside.arena = {Rect{0.0, 1.2, 0.0, 0.3}};
  CHECK_THROWS_WITH_AS(outside.validate(), doctest::Contains("agents[0]"),
                       std::invalid_argument);

  Scenario bad_dt = open_scenario({{at(0.0, 0.0), at(0.5, 0.0)}});
  bad_dt.filter.dt = 0.2;
  CHECK_THROWS_WITH_AS(bad_dt.validate(), doctest::Contains("dt"), std::invalid_argument);

  Scenario late = open_scenario({{at(0.0, 0.0), at(0.5, 0.0)}});
  late.max_sim_time = 0.0;
  CHECK_THROWS_WITH_AS(late.validate(), doctest::Contains("max_sim_time"),
                       std::invalid_argument);
}
