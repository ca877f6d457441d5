#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "swarmplan/hocbf.hpp"

using namespace swarmplan;

namespace {

AgentParams paper_params() {
  AgentParams p;
  p.R = 0.1;
  p.eps = 0.005;
  return p;
}

}  // namespace

TEST_CASE("barrier_value is the squared clearance") {
  const AgentParams params = paper_params();  // 2R + eps = 0.205
  CHECK(barrier_value({0.0, 0.0}, {0.5, 0.0}, params) ==
        doctest::Approx(0.25 - 0.205 * 0.205).epsilon(1e-14));
  // touching: exactly zero
  CHECK(barrier_value({0.0, 0.0}, {0.205, 0.0}, params) == doctest::Approx(0.0).epsilon(1e-14));
  // coincident: minus the squared separation
  CHECK(barrier_value({0.3, 0.3}, {0.3, 0.3}, params) ==
        doctest::Approx(-0.205 * 0.205).epsilon(1e-14));
}

TEST_CASE("barrier_rates on hand-checked states") {
  SUBCASE("co-moving pair has no rate") {
    AgentState xi{0.0, 0.0, 0.7, -0.2};
    AgentState xj{1.0, 0.5, 0.7, -0.2};
    const BarrierRates r = barrier_rates(xi, xj);
    CHECK(r.hdot == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(r.c0 == doctest::Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("head-on closing pair") {
    AgentState xi{0.0, 0.0, 1.0, 0.0};
    AgentState xj{0.5, 0.0, -1.0, 0.0};
    const BarrierRates r = barrier_rates(xi, xj);
    CHECK(r.hdot == doctest::Approx(-2.0).epsilon(1e-14));
    CHECK(r.c0 == doctest::Approx(8.0).epsilon(1e-14));
    CHECK(r.ci.x() == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(r.cj.x() == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("swapping the pair negates the input coefficients and keeps the scalars") {
  std::mt19937_64 rng(17);
  auto uni = [&](double lo, double hi) {
    return lo + (static_cast<double>(rng() >> 11) * 0x1.0p-53) * (hi - lo);
  };
  for (int trial = 0; trial < 100; ++trial) {
    AgentState xi{uni(-1, 1), uni(-1, 1), uni(-1, 1), uni(-1, 1)};
    AgentState xj{uni(-1, 1), uni(-1, 1), uni(-1, 1), uni(-1, 1)};
    const BarrierRates rij = barrier_rates(xi, xj);
    const BarrierRates rji = barrier_rates(xj, xi);
    CHECK(rij.hdot == doctest::Approx(rji.hdot).epsilon(1e-14));
    CHECK(rij.c0 == doctest::Approx(rji.c0).epsilon(1e-14));
    CHECK((rij.ci + rji.ci).norm() == doctest::Approx(0.0).epsilon(1e-14));
    CHECK((rij.cj + rji.cj).norm() == doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("rates match long-double finite differences on random states") {
  const AgentParams params = paper_params();
  std::mt19937_64 rng(23);
  auto uni = [&](double lo, double hi) {
    return lo + (static_cast<double>(rng() >> 11) * 0x1.0p-53) * (hi - lo);
  };
  for (int trial = 0; trial < 1000; ++trial) {
    CAPTURE(trial);
    AgentState xi{uni(-2, 2), uni(-2, 2), uni(-1, 1), uni(-1, 1)};
    AgentState xj{uni(-2, 2), uni(-2, 2), uni(-1, 1), uni(-1, 1)};
    ControlInput ui{uni(-8, 8), uni(-8, 8)};
    ControlInput uj{uni(-8, 8), uni(-8, 8)};
    const BarrierRates r = barrier_rates(xi, xj);
    const double hddot = r.c0 + r.ci.dot(Eigen::Vector2d(ui.ax, ui.ay)) +
                         r.cj.dot(Eigen::Vector2d(uj.ax, uj.ay));
    const auto fd = oracles::fd_barrier_rates(xi, xj, ui, uj, params.min_separation());
    CHECK(std::abs(fd.hdot - r.hdot) <= 1e-6 * (1.0 + std::abs(r.hdot)));
    CHECK(std::abs(fd.hddot - hddot) <= 1e-6 * (1.0 + std::abs(hddot)));
  }
}

TEST_CASE("assemble_constraints covers every unordered pair") {
  std::vector<AgentState> states = {{0, 0, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 0}};
  const auto pairs = assemble_constraints(states, paper_params());
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].i == 0);
  CHECK(pairs[0].j == 1);
  CHECK(pairs[2].i == 1);
  CHECK(pairs[2].j == 2);
}

TEST_CASE("head-on pair near contact violates the condition at zero input") {
  FilterConfig cfg;  // K1=8, K2=7
  std::vector<AgentState> states = {{0.0, 0.0, 1.0, 0.0}, {0.45, 0.0, -1.0, 0.0}};
  const auto pairs = assemble_constraints(states, paper_params());
  REQUIRE(pairs.size() == 1);
  // c0 + 15 hdot + 56 h with h = 0.2025 - 0.042 = 0.160475, hdot = -1.8, c0 = 8
  const double expected = 8.0 + 15.0 * (-1.8) + 56.0 * (0.45 * 0.45 - 0.205 * 0.205);
  CHECK(condition_constant(pairs[0], cfg) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(condition_constant(pairs[0], cfg) < 0.0);  // u = 0 is not safe here
}

TEST_CASE("filter returns feasible inputs unchanged") {
  FilterConfig cfg;
  const AgentParams params = paper_params();
  std::vector<AgentState> states = {{0.0, 0.0, 0.0, 0.0}, {2.0, 0.0, 0.0, 0.0}};
  std::vector<ControlInput> u_star = {{1.0, 0.5}, {-0.5, 0.25}};
  FilterReport rep;
  const auto u = safety_filter(u_star, states, params, cfg, {}, &rep);
  CHECK(rep.active == false);
  CHECK(rep.soft == false);
  CHECK(std::abs(u[0].ax - 1.0) <= 1e-9);
  CHECK(std::abs(u[0].ay - 0.5) <= 1e-9);
  CHECK(std::abs(u[1].ax + 0.5) <= 1e-9);
  CHECK(rep.correction <= 1e-9);
}

TEST_CASE("filter is idempotent") {
  FilterConfig cfg;
  const AgentParams params = paper_params();
  std::vector<AgentState> states = {{0.0, 0.0, 1.0, 0.0}, {0.5, 0.0, -1.0, 0.0}};
  std::vector<ControlInput> u_star = {{0.0, 0.0}, {0.0, 0.0}};
  const auto u1 = safety_filter(u_star, states, params, cfg);
  const auto u2 = safety_filter(u1, states, params, cfg);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(u2[i].ax - u1[i].ax) <= 1e-9);
    CHECK(std::abs(u2[i].ay - u1[i].ay) <= 1e-9);
  }
}

TEST_CASE("symmetric head-on corrections mirror each other") {
  FilterConfig cfg;
  const AgentParams params = paper_params();
  std::vector<AgentState> states = {{-0.15, 0.0, 0.8, 0.0}, {0.15, 0.0, -0.8, 0.0}};
  std::vector<ControlInput> u_star = {{0.0, 0.0}, {0.0, 0.0}};
  FilterReport rep;
  const auto u = safety_filter(u_star, states, params, cfg, {}, &rep);
  CHECK(rep.active == true);
  CHECK(u[0].ax == doctest::Approx(-u[1].ax).epsilon(1e-7));
  CHECK(u[0].ay == doctest::Approx(-u[1].ay).epsilon(1e-7));

  // cross-check against the multiresolution grid oracle
  const auto pairs = assemble_constraints(states, params);
  const double rhs = condition_constant(pairs[0], cfg);
  const Eigen::Vector2d ci = pairs[0].ci, cj = pairs[0].cj;
  const Eigen::Vector4d u_grid = oracles::grid_filter_2agents(
      Eigen::Vector4d::Zero(), cfg.a_peak, [&](const Eigen::Vector4d& v) {
        return ci.dot(v.head<2>()) + cj.dot(v.tail<2>()) + rhs >= 0.0;
      });
  CHECK(std::abs(u[0].ax - u_grid(0)) <= 5e-3);
  CHECK(std::abs(u[0].ay - u_grid(1)) <= 5e-3);
  CHECK(std::abs(u[1].ax - u_grid(2)) <= 5e-3);
  CHECK(std::abs(u[1].ay - u_grid(3)) <= 5e-3);
}

TEST_CASE("hopeless overlap engages the soft fallback") {
  FilterConfig cfg;
  const AgentParams params = paper_params();
  // deep interpenetration while nearly at rest: the separation is so small
  // that the largest reachable coupling 2|ci| a_peak cannot outweigh the
  // negative K1 K2 h term, so the hard condition is infeasible
  std::vector<AgentState> states = {{0.0, 0.0, 0.1, 0.0}, {0.02, 0.0, -0.1, 0.0}};
  std::vector<ControlInput> u_star = {{0.0, 0.0}, {0.0, 0.0}};
  const auto pairs = assemble_constraints(states, params);
  REQUIRE(condition_constant(pairs[0], cfg) < -2.0 * pairs[0].ci.norm() * cfg.a_peak);
  FilterReport rep;
  const auto u = safety_filter(u_star, states, params, cfg, {}, &rep);
  CHECK(rep.soft == true);
  CHECK(rep.max_slack > 0.0);
  // the peak ball stays hard even in soft mode
  CHECK(std::hypot(u[0].ax, u[0].ay) <= cfg.a_peak + 1e-8);
  CHECK(std::hypot(u[1].ax, u[1].ay) <= cfg.a_peak + 1e-8);
}

TEST_CASE("outputs respect the peak ball on random aggressive requests") {
  FilterConfig cfg;
  const AgentParams params = paper_params();
  std::mt19937_64 rng(31);
  auto uni = [&](double lo, double hi) {
    return lo + (static_cast<double>(rng() >> 11) * 0x1.0p-53) * (hi - lo);
  };
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<AgentState> states;
    std::vector<ControlInput> u_star;
    for (int i = 0; i < 4; ++i) {
      states.push_back({uni(-0.5, 0.5), uni(-0.5, 0.5), uni(-1, 1), uni(-1, 1)});
      u_star.push_back({uni(-12, 12), uni(-12, 12)});
    }
    const auto u = safety_filter(u_star, states, params, cfg);
    for (int i = 0; i < 4; ++i) CHECK(std::hypot(u[i].ax, u[i].ay) <= cfg.a_peak + 1e-8);
  }
}

TEST_CASE("arena input boxes are honoured") {
  FilterConfig cfg;
  const AgentParams params = paper_params();
  std::vector<AgentState> states = {{0.0, 0.0, 0.0, 0.0}, {2.0, 0.0, 0.0, 0.0}};
  std::vector<ControlInput> u_star = {{5.0, 0.0}, {0.0, 0.0}};
  std::vector<InputBounds> bounds(2);
  bounds[0].lo = {-1.0, -1.0};
  bounds[0].hi = {1.0, 1.0};  // agent 0 capped at 1
  bounds[1].lo = {-8.0, -8.0};
  bounds[1].hi = {8.0, 8.0};
  FilterReport rep;
  const auto u = safety_filter(u_star, states, params, cfg, bounds, &rep);
  CHECK(u[0].ax == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(rep.active == true);
}

TEST_CASE("filtered head-on approach keeps the barrier nonnegative for 10 seconds") {
  FilterConfig cfg;
  const AgentParams params = paper_params();
  const double dt = 0.1;
  const DiscreteDynamics dyn = discretize(dt);
  // v_max approach speeds, comfortably safe at the start
  std::vector<AgentState> states = {{-1.5, 0.0, 1.0, 0.0}, {1.5, 0.0, -1.0, 0.0}};
  {
    const auto pairs = assemble_constraints(states, params);
    REQUIRE(pairs[0].h > 0.0);
    REQUIRE(pairs[0].hdot + cfg.K1 * pairs[0].h > 0.0);  // psi1(0) > 0
  }
  double min_h = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 100; ++k) {
    // nominal inputs keep pushing the agents through each other
    std::vector<ControlInput> u_star = {{states[0].vx < 1.0 ? 5.0 : 0.0, 0.0},
                                        {states[1].vx > -1.0 ? -5.0 : 0.0, 0.0}};
    const auto u = safety_filter(u_star, states, params, cfg);
    states[0] = step(states[0], u[0], dyn);
    states[1] = step(states[1], u[1], dyn);
    min_h = std::min(min_h, barrier_value(states[0].pos(), states[1].pos(), params));
  }
  const double sep = params.min_separation();
  CHECK(min_h >= -1e-3 * sep * sep);
}
