#include "swarmplan/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "plan_common.hpp"
#include "swarmplan/qsolve.hpp"

namespace swarmplan {

CentralConfig::CentralConfig() {
  Q = Eigen::Vector4d(1.0, 1.0, 0.0, 0.0).asDiagonal();
  Rw = 1e-4 * Eigen::Matrix2d::Identity();
}

void CentralConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt))
    throw std::invalid_argument("central.dt must be > 0");
  if (K < 1) throw std::invalid_argument("central.K must be >= 1");
  if (eps < 0.0 || !std::isfinite(eps))
    throw std::invalid_argument("central.eps must be >= 0");
  if (max_sqp < 1) throw std::invalid_argument("central.max_sqp must be >= 1");
  if (!(step_tol > 0.0)) throw std::invalid_argument("central.step_tol must be > 0");
  if (!(merit_weight > 0.0))
    throw std::invalid_argument("central.merit_weight must be > 0");
  if (!Q.isApprox(Q.transpose()))
    throw std::invalid_argument("central.Q must be symmetric positive semidefinite");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> qe(Q);
  if (qe.eigenvalues().minCoeff() < -1e-12)
    throw std::invalid_argument("central.Q must be symmetric positive semidefinite");
  if (!Rw.isApprox(Rw.transpose()))
    throw std::invalid_argument("central.Rw must be symmetric positive definite");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> re(Rw);
  if (re.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("central.Rw must be symmetric positive definite");
}

namespace {

using detail::arena_rhs;
using detail::input_off;
using detail::relaxed_speed_limit;
using detail::state_off;

// Curvature put on each slack so the stacked Hessian stays positive
// definite; small enough that the penalty stays effectively linear.
constexpr double kSlackCurv = 1.0;

// Stacked layout: one interleaved block of 6K+4 per agent, then one slack
// per pair row. Rows go arena first (4K per agent when a rectangle is
// given), then K rows per pair, then the slack sign rows. The slacks make
// every linearised subproblem feasible: a separation row the current
// linearisation cannot satisfy is absorbed at the merit weight instead of
// poisoning the whole program.
struct Layout {
  int N = 0, K = 0, block = 0, n = 0;
  int arena_per_agent = 0;
  std::vector<std::pair<int, int>> pairs;

  int base(int i) const { return i * block; }
  int sx(int i, int k) const { return base(i) + state_off(k); }
  int su(int i, int k) const { return base(i) + input_off(k); }
  int slack(int pi, int k) const { return N * block + pi * K + (k - 1); }
  int arena_row(int i, int r) const { return i * arena_per_agent + r; }
  int pair_row(int pi, int k) const {
    return N * arena_per_agent + pi * K + (k - 1);
  }
  int sign_row(int pi, int k) const {
    return N * arena_per_agent + (static_cast<int>(pairs.size()) + pi) * K + (k - 1);
  }
};

Layout make_layout(int N, const CentralConfig& cfg, bool with_rect) {
  Layout lo;
  lo.N = N;
  lo.K = cfg.K;
  lo.block = 6 * cfg.K + 4;
  lo.arena_per_agent = with_rect ? 4 * cfg.K : 0;
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) lo.pairs.emplace_back(i, j);
  lo.n = N * lo.block + static_cast<int>(lo.pairs.size()) * cfg.K;
  return lo;
}

Eigen::VectorXd stacked_gradient(const Layout& lo, const std::vector<AgentState>& targets,
                                 const CentralConfig& cfg) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(lo.n);
  for (int i = 0; i < lo.N; ++i)
    for (int k = 1; k <= lo.K; ++k)
      g.segment<4>(lo.sx(i, k)) = -2.0 * cfg.Q * targets[static_cast<size_t>(i)].vec();
  for (int s = lo.N * lo.block; s < lo.n; ++s) g(s) = cfg.merit_weight;
  return g;
}

Eigen::VectorXd stacked_eq_rhs(const Layout& lo, const std::vector<AgentState>& x0s) {
  Eigen::VectorXd eqb = Eigen::VectorXd::Zero(lo.N * 4 * (lo.K + 1));
  for (int i = 0; i < lo.N; ++i)
    eqb.segment<4>(i * 4 * (lo.K + 1)) = x0s[static_cast<size_t>(i)].vec();
  return eqb;
}

DenseQcqp build_central(const Layout& lo, const std::vector<AgentState>& x0s,
                        const std::vector<AgentState>& targets, const CentralConfig& cfg,
                        const AgentParams& params, const Rect* rect) {
  const int K = lo.K;
  const DiscreteDynamics dyn = discretize(cfg.dt);

  DenseQcqp p;
  p.n = lo.n;
  p.H = Eigen::MatrixXd::Zero(lo.n, lo.n);
  p.g = stacked_gradient(lo, targets, cfg);
  p.eqA = Eigen::MatrixXd::Zero(lo.N * 4 * (K + 1), lo.n);
  p.eqb = stacked_eq_rhs(lo, x0s);

  for (int i = 0; i < lo.N; ++i) {
    for (int k = 1; k <= K; ++k) p.H.block<4, 4>(lo.sx(i, k), lo.sx(i, k)) = 2.0 * cfg.Q;
    for (int k = 0; k < K; ++k) p.H.block<2, 2>(lo.su(i, k), lo.su(i, k)) = 2.0 * cfg.Rw;

    const int er = i * 4 * (K + 1);
    p.eqA.block<4, 4>(er, lo.sx(i, 0)).setIdentity();
    for (int k = 0; k < K; ++k) {
      p.eqA.block<4, 4>(er + 4 * (k + 1), lo.sx(i, k + 1)).setIdentity();
      p.eqA.block<4, 4>(er + 4 * (k + 1), lo.sx(i, k)) = -dyn.Ad;
      p.eqA.block<4, 2>(er + 4 * (k + 1), lo.su(i, k)) = -dyn.Bd;
    }
  }
  for (int s = lo.N * lo.block; s < lo.n; ++s) p.H(s, s) = 2.0 * kSlackCurv;

  const int mi = lo.N * lo.arena_per_agent + 2 * static_cast<int>(lo.pairs.size()) * K;
  p.inA = Eigen::MatrixXd::Zero(mi, lo.n);
  p.inb = Eigen::VectorXd::Ones(mi);  // pair rows start disabled (0 <= 1)
  for (size_t pi = 0; pi < lo.pairs.size(); ++pi) {
    for (int k = 1; k <= K; ++k) {
      const int r = lo.sign_row(static_cast<int>(pi), k);
      p.inA(r, lo.slack(static_cast<int>(pi), k)) = -1.0;
      p.inb(r) = 0.0;  // slacks never go negative
    }
  }
  if (rect != nullptr) {
    const Rect shrunk = shrink_rect(*rect, params);
    for (int i = 0; i < lo.N; ++i) {
      p.inb.segment(lo.arena_row(i, 0), 4 * K) =
          arena_rhs(shrunk, x0s[static_cast<size_t>(i)], cfg.dt, K, params);
      for (int k = 1; k <= K; ++k) {
        const int r = lo.arena_row(i, 4 * (k - 1));
        p.inA(r + 0, lo.sx(i, k) + 0) = 1.0;
        p.inA(r + 1, lo.sx(i, k) + 0) = -1.0;
        p.inA(r + 2, lo.sx(i, k) + 1) = 1.0;
        p.inA(r + 3, lo.sx(i, k) + 1) = -1.0;
      }
    }
  }

  for (int i = 0; i < lo.N; ++i) {
    const double v0 = x0s[static_cast<size_t>(i)].vel().norm();
    for (int k = 1; k <= K; ++k)
      p.balls.push_back({{lo.sx(i, k) + 2, lo.sx(i, k) + 3},
                         Eigen::Vector2d::Zero(),
                         relaxed_speed_limit(v0, k, cfg.dt, params)});
    for (int k = 0; k < K; ++k)
      p.balls.push_back(
          {{lo.su(i, k), lo.su(i, k) + 1}, Eigen::Vector2d::Zero(), params.a_max});
  }
  return p;
}

double objective_of(const Eigen::VectorXd& x, const Layout& lo,
                    const std::vector<AgentState>& targets, const CentralConfig& cfg) {
  double f = 0.0;
  for (int i = 0; i < lo.N; ++i) {
    for (int k = 1; k <= lo.K; ++k) {
      const Eigen::Vector4d e =
          x.segment<4>(lo.sx(i, k)) - targets[static_cast<size_t>(i)].vec();
      f += e.dot(cfg.Q * e);
    }
    for (int k = 0; k < lo.K; ++k) {
      const Eigen::Vector2d u = x.segment<2>(lo.su(i, k));
      f += u.dot(cfg.Rw * u);
    }
  }
  return f;
}

double violation_of(const Eigen::VectorXd& x, const Layout& lo, double d) {
  double v = 0.0;
  for (const auto& [i, j] : lo.pairs)
    for (int k = 1; k <= lo.K; ++k)
      v += std::max(0.0, d - (x.segment<2>(lo.sx(i, k)) - x.segment<2>(lo.sx(j, k))).norm());
  return v;
}

// Supporting hyperplane of each pair constraint about the current iterate;
// any point satisfying the row with zero slack satisfies the true
// separation. A coincident pair gets the +x direction.
void set_pair_rows(QcqpSolver& solver, const Eigen::VectorXd& x, const Layout& lo,
                   double d) {
  Eigen::RowVectorXd row(lo.n);
  for (size_t pi = 0; pi < lo.pairs.size(); ++pi) {
    const auto& [i, j] = lo.pairs[pi];
    for (int k = 1; k <= lo.K; ++k) {
      const Eigen::Vector2d diff = x.segment<2>(lo.sx(i, k)) - x.segment<2>(lo.sx(j, k));
      const double dist = diff.norm();
      const Eigen::Vector2d a =
          dist < 1e-12 ? Eigen::Vector2d::UnitX() : Eigen::Vector2d(diff / dist);
      row.setZero();
      row.segment<2>(lo.sx(i, k)) = -a.transpose();
      row.segment<2>(lo.sx(j, k)) = a.transpose();
      row(lo.slack(static_cast<int>(pi), k)) = -1.0;
      solver.set_ineq_row(lo.pair_row(static_cast<int>(pi), k), row, -d);
    }
  }
}

void disable_pair_rows(QcqpSolver& solver, const Layout& lo) {
  const Eigen::RowVectorXd zero = Eigen::RowVectorXd::Zero(lo.n);
  for (size_t pi = 0; pi < lo.pairs.size(); ++pi)
    for (int k = 1; k <= lo.K; ++k)
      solver.set_ineq_row(lo.pair_row(static_cast<int>(pi), k), zero, 1.0);
}

// One QP solve with a single cold retry; false means the linearised
// program could not be solved to feasibility (stall for the outer loop).
bool solve_qp(QcqpSolver& solver, SolveReport& rep) {
  rep = solver.solve();
  if (rep.status == SolveStatus::max_iter) {
    solver.reset_warm_start();
    rep = solver.solve();
  }
  if (rep.status == SolveStatus::infeasible) return false;
  return rep.kkt_feasibility <= 1e-8;
}

}  // namespace

CentralPlan solve_centralized_step(const std::vector<AgentState>& x0s,
                                   const std::vector<AgentState>& targets,
                                   const CentralConfig& cfg, const AgentParams& params,
                                   const Rect* rect,
                                   const std::vector<KnotTrajectory>* warm_start,
                                   std::unique_ptr<QcqpSolver>* reuse) {
  cfg.validate();
  params.validate();
  const int N = static_cast<int>(x0s.size());
  if (N < 1) throw std::invalid_argument("central: at least one agent required");
  if (targets.size() != x0s.size())
    throw std::invalid_argument("central: x0s and targets size mismatch");
  if (warm_start != nullptr) {
    if (static_cast<int>(warm_start->size()) != N)
      throw std::invalid_argument("central: warm_start agent count mismatch");
    for (const KnotTrajectory& t : *warm_start)
      if (t.horizon() != cfg.K)
        throw std::invalid_argument("central: warm_start horizon mismatch");
  }

  const Layout lo = make_layout(N, cfg, rect != nullptr);
  const double d = 2.0 * params.R + cfg.eps;

  SolveOptions opts;
  opts.max_iter = 2000;
  QcqpSolver* solver = nullptr;
  std::unique_ptr<QcqpSolver> local;
  if (reuse != nullptr && *reuse != nullptr) {
    solver = reuse->get();
    solver->set_gradient(stacked_gradient(lo, targets, cfg));
    solver->set_eq_rhs(stacked_eq_rhs(lo, x0s));
    for (int i = 0; i < N; ++i) {
      const double v0 = x0s[static_cast<size_t>(i)].vel().norm();
      for (int k = 1; k <= lo.K; ++k) {
        const double r = relaxed_speed_limit(v0, k, cfg.dt, params);
        const int id = i * 2 * lo.K + (k - 1);
        if (solver->problem().balls[static_cast<size_t>(id)].radius != r)
          solver->set_ball(id, Eigen::Vector2d::Zero(), r);
      }
      if (rect != nullptr) {
        const Eigen::VectorXd rhs =
            arena_rhs(shrink_rect(*rect, params), x0s[static_cast<size_t>(i)], cfg.dt,
                      lo.K, params);
        for (int r = 0; r < rhs.size(); ++r)
          if (solver->problem().inb(lo.arena_row(i, r)) != rhs(r))
            solver->set_ineq_rhs(lo.arena_row(i, r), rhs(r));
      }
    }
  } else {
    DenseQcqp p = build_central(lo, x0s, targets, cfg, params, rect);
    local = std::make_unique<QcqpSolver>(std::move(p), opts);
    solver = local.get();
  }

  CentralPlan plan;
  SolveReport rep;

  Eigen::VectorXd x_cur;
  if (warm_start != nullptr) {
    x_cur.setZero(lo.n);  // slack tail stays zero
    for (int i = 0; i < N; ++i) {
      const KnotTrajectory& t = (*warm_start)[static_cast<size_t>(i)];
      for (int k = 0; k <= lo.K; ++k)
        x_cur.segment<4>(lo.sx(i, k)) = t.states[static_cast<size_t>(k)].vec();
      for (int k = 0; k < lo.K; ++k)
        x_cur.segment<2>(lo.su(i, k)) = t.inputs[static_cast<size_t>(k)].vec();
    }
  } else {
    // stacked independent tracking solves seed the first linearisation
    disable_pair_rows(*solver, lo);
    if (!solve_qp(*solver, rep))
      throw std::runtime_error("central: uncoupled seed solve failed");
    x_cur = rep.x;
  }

  double merit_cur =
      objective_of(x_cur, lo, targets, cfg) + cfg.merit_weight * violation_of(x_cur, lo, d);
  plan.merit_history.push_back(merit_cur);

  for (int it = 0; it < cfg.max_sqp; ++it) {
    set_pair_rows(*solver, x_cur, lo, d);
    if (!solve_qp(*solver, rep)) break;  // stall: keep the best iterate
    ++plan.iterations;

    const Eigen::VectorXd s = rep.x - x_cur;
    if (s.cwiseAbs().maxCoeff() < cfg.step_tol) {
      const double merit_new = objective_of(rep.x, lo, targets, cfg) +
                               cfg.merit_weight * violation_of(rep.x, lo, d);
      if (merit_new <= merit_cur) {
        x_cur = rep.x;
        plan.merit_history.push_back(merit_new);
      }
      plan.converged = true;
      break;
    }

    double alpha = 1.0;
    bool accepted = false;
    for (int half = 0; half < 13; ++half) {
      const Eigen::VectorXd cand = x_cur + alpha * s;
      const double merit_cand = objective_of(cand, lo, targets, cfg) +
                                cfg.merit_weight * violation_of(cand, lo, d);
      if (merit_cand <= merit_cur) {
        x_cur = cand;
        merit_cur = merit_cand;
        plan.merit_history.push_back(merit_cur);
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // no descent under any step length
  }

  plan.objective = objective_of(x_cur, lo, targets, cfg);
  for (const auto& [i, j] : lo.pairs)
    for (int k = 1; k <= lo.K; ++k)
      plan.min_separation =
          std::min(plan.min_separation,
                   (x_cur.segment<2>(lo.sx(i, k)) - x_cur.segment<2>(lo.sx(j, k))).norm());
  plan.unsafe = N >= 2 && d - plan.min_separation > 0.5 * cfg.eps;

  plan.trajs.resize(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    KnotTrajectory& t = plan.trajs[static_cast<size_t>(i)];
    t.dt = cfg.dt;
    for (int k = 0; k <= lo.K; ++k)
      t.states.push_back(AgentState::from_vec(x_cur.segment<4>(lo.sx(i, k))));
    for (int k = 0; k < lo.K; ++k)
      t.inputs.push_back(ControlInput::from_vec(x_cur.segment<2>(lo.su(i, k))));
  }

  if (reuse != nullptr && *reuse == nullptr) *reuse = std::move(local);
  return plan;
}

}  // namespace swarmplan
