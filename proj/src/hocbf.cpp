#include "swarmplan/hocbf.hpp"

#include <cmath>
#include <stdexcept>

#include "swarmplan/log.hpp"
#include "swarmplan/qsolve.hpp"

namespace swarmplan {

void FilterConfig::validate() const {
  if (!(K1 > 0.0) || !std::isfinite(K1)) throw std::invalid_argument("filter.K1 must be > 0");
  if (!(K2 > 0.0) || !std::isfinite(K2)) throw std::invalid_argument("filter.K2 must be > 0");
  if (!(a_peak > 0.0) || !std::isfinite(a_peak))
    throw std::invalid_argument("filter.a_peak must be > 0");
  if (!(soft_penalty > 0.0) || !std::isfinite(soft_penalty))
    throw std::invalid_argument("filter.soft_penalty must be > 0");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("filter.dt must be > 0");
}

double barrier_value(const Eigen::Vector2d& p_i, const Eigen::Vector2d& p_j,
                     const AgentParams& params) {
  const double d = params.min_separation();
  return (p_i - p_j).squaredNorm() - d * d;
}

BarrierRates barrier_rates(const AgentState& xi, const AgentState& xj) {
  BarrierRates r;
  const Eigen::Vector2d dp = xi.pos() - xj.pos();
  const Eigen::Vector2d dv = xi.vel() - xj.vel();
  r.hdot = 2.0 * dp.dot(dv);
  r.c0 = 2.0 * dv.squaredNorm();
  r.ci = 2.0 * dp;
  r.cj = -r.ci;
  return r;
}

double condition_constant(const PairBarrier& pb, const FilterConfig& cfg) {
  return pb.c0 + (cfg.K1 + cfg.K2) * pb.hdot + cfg.K1 * cfg.K2 * pb.h;
}

std::vector<PairBarrier> assemble_constraints(const std::vector<AgentState>& states,
                                              const AgentParams& params) {
  const int N = static_cast<int>(states.size());
  std::vector<PairBarrier> out;
  out.reserve(static_cast<size_t>(N) * (N - 1) / 2);
  for (int i = 0; i < N; ++i) {
    for (int j = i + 1; j < N; ++j) {
      PairBarrier pb;
      pb.i = i;
      pb.j = j;
      pb.h = barrier_value(states[i].pos(), states[j].pos(), params);
      const BarrierRates r = barrier_rates(states[i], states[j]);
      pb.hdot = r.hdot;
      pb.c0 = r.c0;
      pb.ci = r.ci;
      pb.cj = r.cj;
      out.push_back(pb);
    }
  }
  return out;
}

namespace {

// rows of the hard filter QCQP, kept so the soft rebuild can reuse them
struct FilterRows {
  Eigen::MatrixXd A;  // A u <= b
  Eigen::VectorXd b;
  int npair = 0;  // leading rows are pair conditions, the rest arena
};

FilterRows build_rows(const std::vector<PairBarrier>& pairs, const FilterConfig& cfg,
                      const std::vector<InputBounds>& arena_bounds, int N, int* pairs_kept) {
  std::vector<int> keep;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const PairBarrier& pb = pairs[k];
    // a distant pair cannot be driven negative by any admissible input;
    // the largest reachable |ci.u_i + cj.u_j| is 2 |ci| a_peak
    const double reach = 2.0 * pb.ci.norm() * cfg.a_peak;
    if (condition_constant(pb, cfg) > 10.0 * reach) continue;
    keep.push_back(static_cast<int>(k));
  }
  *pairs_kept = static_cast<int>(keep.size());

  const int n_arena = arena_bounds.empty() ? 0 : 4 * N;
  FilterRows rows;
  rows.npair = static_cast<int>(keep.size());
  rows.A = Eigen::MatrixXd::Zero(rows.npair + n_arena, 2 * N);
  rows.b = Eigen::VectorXd::Zero(rows.npair + n_arena);
  for (int r = 0; r < rows.npair; ++r) {
    const PairBarrier& pb = pairs[keep[r]];
    rows.A.block<1, 2>(r, 2 * pb.i) = -pb.ci.transpose();
    rows.A.block<1, 2>(r, 2 * pb.j) = -pb.cj.transpose();
    rows.b(r) = condition_constant(pb, cfg);
  }
  for (int i = 0; i < N && n_arena > 0; ++i) {
    const InputBounds& ib = arena_bounds[i];
    for (int axis = 0; axis < 2; ++axis) {
      const int r = rows.npair + 4 * i + 2 * axis;
      rows.A(r, 2 * i + axis) = 1.0;  // u <= hi
      rows.b(r) = ib.hi(axis);
      rows.A(r + 1, 2 * i + axis) = -1.0;  // -u <= -lo
      rows.b(r + 1) = -ib.lo(axis);
    }
  }
  return rows;
}

}  // namespace

std::vector<ControlInput> safety_filter(const std::vector<ControlInput>& u_star,
                                        const std::vector<AgentState>& states,
                                        const AgentParams& params, const FilterConfig& cfg,
                                        const std::vector<InputBounds>& arena_bounds,
                                        FilterReport* report) {
  cfg.validate();
  const int N = static_cast<int>(states.size());
  if (static_cast<int>(u_star.size()) != N)
    throw std::invalid_argument("filter: u_star and states disagree on agent count");
  if (!arena_bounds.empty() && static_cast<int>(arena_bounds.size()) != N)
    throw std::invalid_argument("filter: arena_bounds and states disagree on agent count");

  FilterReport rep;
  const std::vector<PairBarrier> pairs = assemble_constraints(states, params);
  const FilterRows rows = build_rows(pairs, cfg, arena_bounds, N, &rep.pairs_kept);
  const int m = static_cast<int>(rows.A.rows());

  DenseQcqp hard;
  hard.n = 2 * N;
  hard.H = 2.0 * Eigen::MatrixXd::Identity(2 * N, 2 * N);
  hard.g.resize(2 * N);
  for (int i = 0; i < N; ++i) {
    hard.g(2 * i) = -2.0 * u_star[i].ax;
    hard.g(2 * i + 1) = -2.0 * u_star[i].ay;
  }
  hard.eqA.resize(0, hard.n);
  hard.eqb.resize(0);
  hard.inA = rows.A;
  hard.inb = rows.b;
  for (int i = 0; i < N; ++i)
    hard.balls.push_back({{2 * i, 2 * i + 1}, Eigen::Vector2d::Zero(), cfg.a_peak});

  SolveReport sol = solve_convex_qcqp(hard);
  Eigen::VectorXd u;
  if (sol.status == SolveStatus::optimal) {
    u = sol.x;
  } else {
    // relax the pair and arena rows with penalised slacks; the peak
    // acceleration ball must hold no matter what
    rep.soft = true;
    SWARMPLAN_LOG_INFO("safety filter fell back to soft constraints");
    DenseQcqp soft;
    soft.n = 2 * N + m;
    soft.H = Eigen::MatrixXd::Zero(soft.n, soft.n);
    soft.H.topLeftCorner(2 * N, 2 * N) = hard.H;
    for (int r = 0; r < m; ++r) soft.H(2 * N + r, 2 * N + r) = 2.0 * cfg.soft_penalty;
    soft.g = Eigen::VectorXd::Zero(soft.n);
    soft.g.head(2 * N) = hard.g;
    soft.eqA.resize(0, soft.n);
    soft.eqb.resize(0);
    soft.inA = Eigen::MatrixXd::Zero(2 * m, soft.n);
    soft.inb = Eigen::VectorXd::Zero(2 * m);
    soft.inA.topLeftCorner(m, 2 * N) = rows.A;
    for (int r = 0; r < m; ++r) {
      soft.inA(r, 2 * N + r) = -1.0;  // row minus its slack
      soft.inb(r) = rows.b(r);
      soft.inA(m + r, 2 * N + r) = -1.0;  // slack >= 0
    }
    soft.balls = hard.balls;
    sol = solve_convex_qcqp(soft);
    if (sol.status != SolveStatus::optimal)
      SWARMPLAN_LOG_ERROR(std::string("soft filter solve ended with status ") +
                          to_string(sol.status));
    u = sol.x.head(2 * N);
    if (m > 0) rep.max_slack = sol.x.tail(m).maxCoeff();
  }

  std::vector<ControlInput> out(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    out[i].ax = u(2 * i);
    out[i].ay = u(2 * i + 1);
    const double di = std::hypot(out[i].ax - u_star[i].ax, out[i].ay - u_star[i].ay);
    rep.correction += di;
    if (di > 1e-9) rep.active = true;
  }
  if (report) *report = rep;
  return out;
}

}  // namespace swarmplan
