#include "swarmplan/admm.hpp"

#include <cstdio>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "plan_common.hpp"
#include "swarmplan/log.hpp"
#include "swarmplan/qsolve.hpp"

namespace swarmplan {

using detail::arena_rhs;
using detail::input_off;
using detail::relaxed_speed_limit;
using detail::state_off;

AdmmConfig::AdmmConfig() {
  Q = Eigen::Vector4d(1.0, 1.0, 0.0, 0.0).asDiagonal();
  Rw = 1e-4 * Eigen::Matrix2d::Identity();
}

void AdmmConfig::validate() const {
  if (m < 1) throw std::invalid_argument("admm.m must be >= 1");
  if (m_pre < 0) throw std::invalid_argument("admm.m_pre must be >= 0");
  if (!(mu > 0.0) || !std::isfinite(mu)) throw std::invalid_argument("admm.mu must be > 0");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("admm.dt must be > 0");
  if (K < 1) throw std::invalid_argument("admm.K must be >= 1");
  if (!Q.isApprox(Q.transpose()))
    throw std::invalid_argument("admm.Q must be symmetric positive semidefinite");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> qe(Q);
  if (qe.eigenvalues().minCoeff() < -1e-12)
    throw std::invalid_argument("admm.Q must be symmetric positive semidefinite");
  if (!Rw.isApprox(Rw.transpose()))
    throw std::invalid_argument("admm.Rw must be symmetric positive definite");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> re(Rw);
  if (re.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("admm.Rw must be symmetric positive definite");
}

AdmmConfig admm_preset_m1() {
  AdmmConfig cfg;
  cfg.m = 1;
  cfg.mu = 1.0;
  return cfg;
}

AdmmConfig admm_preset_m20() {
  AdmmConfig cfg;
  cfg.m = 20;
  cfg.mu = 40.0;
  return cfg;
}

namespace {

std::vector<Eigen::Vector2d> line_positions(const AgentState& from, const AgentState& to,
                                            int K) {
  std::vector<Eigen::Vector2d> out(static_cast<size_t>(K) + 1);
  for (int k = 0; k <= K; ++k) {
    const double a = static_cast<double>(k) / K;
    out[static_cast<size_t>(k)] = (1.0 - a) * from.pos() + a * to.pos();
  }
  return out;
}

Eigen::VectorXd tracking_gradient(int agent_id, const AgentState& target,
                                  const SharedBoard& board, const AdmmConfig& cfg) {
  const int K = cfg.K;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(6 * K + 4);
  const ConsensusSet& own = board.agents[static_cast<size_t>(agent_id)].cs;
  for (int k = 1; k <= K; ++k) {
    g.segment<4>(state_off(k)) = -2.0 * cfg.Q * target.vec();
    Eigen::Vector2d pull =
        own.lam_self[static_cast<size_t>(k)] - cfg.mu * own.z_self[static_cast<size_t>(k)];
    for (int j = 0; j < board.num_agents(); ++j) {
      if (j == agent_id) continue;
      const ConsensusSet& other = board.agents[static_cast<size_t>(j)].cs;
      pull += other.lam_other[static_cast<size_t>(agent_id)][static_cast<size_t>(k)] -
              cfg.mu * other.z_other[static_cast<size_t>(agent_id)][static_cast<size_t>(k)];
    }
    g.segment<2>(state_off(k)) += pull;
  }
  return g;
}

DenseQcqp build_tracking_qcqp(int agent_id, const AgentState& x0, const AgentState& target,
                              const SharedBoard& board, const AdmmConfig& cfg,
                              const AgentParams& params, const Rect* rect) {
  const int K = cfg.K;
  const int n = 6 * K + 4;
  const int N = board.num_agents();
  const DiscreteDynamics dyn = discretize(cfg.dt);

  DenseQcqp p;
  p.n = n;
  p.H = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k <= K; ++k) {
    p.H.block<4, 4>(state_off(k), state_off(k)) = 2.0 * cfg.Q;
    // one copy of this agent's position per agent on the board
    p.H.block<2, 2>(state_off(k), state_off(k)) +=
        cfg.mu * N * Eigen::Matrix2d::Identity();
  }
  for (int k = 0; k < K; ++k)
    p.H.block<2, 2>(input_off(k), input_off(k)) = 2.0 * cfg.Rw;
  p.g = tracking_gradient(agent_id, target, board, cfg);

  p.eqA = Eigen::MatrixXd::Zero(4 * (K + 1), n);
  p.eqb = Eigen::VectorXd::Zero(4 * (K + 1));
  p.eqA.block<4, 4>(0, 0).setIdentity();
  p.eqb.head<4>() = x0.vec();
  for (int k = 0; k < K; ++k) {
    p.eqA.block<4, 4>(4 * (k + 1), state_off(k + 1)).setIdentity();
    p.eqA.block<4, 4>(4 * (k + 1), state_off(k)) = -dyn.Ad;
    p.eqA.block<4, 2>(4 * (k + 1), input_off(k)) = -dyn.Bd;
  }

  if (rect != nullptr) {
    const Rect shrunk = shrink_rect(*rect, params);
    p.inA = Eigen::MatrixXd::Zero(4 * K, n);
    p.inb = arena_rhs(shrunk, x0, cfg.dt, K, params);
    for (int k = 1; k <= K; ++k) {
      const int r = 4 * (k - 1);
      p.inA(r + 0, state_off(k) + 0) = 1.0;
      p.inA(r + 1, state_off(k) + 0) = -1.0;
      p.inA(r + 2, state_off(k) + 1) = 1.0;
      p.inA(r + 3, state_off(k) + 1) = -1.0;
    }
  } else {
    p.inA.resize(0, n);
    p.inb.resize(0);
  }

  const double v0 = x0.vel().norm();
  for (int k = 1; k <= K; ++k)
    p.balls.push_back({{state_off(k) + 2, state_off(k) + 3},
                       Eigen::Vector2d::Zero(),
                       relaxed_speed_limit(v0, k, cfg.dt, params)});
  for (int k = 0; k < K; ++k)
    p.balls.push_back(
        {{input_off(k), input_off(k) + 1}, Eigen::Vector2d::Zero(), params.a_max});
  return p;
}

KnotTrajectory extract_trajectory(const Eigen::VectorXd& x, const AdmmConfig& cfg) {
  KnotTrajectory traj;
  traj.dt = cfg.dt;
  for (int k = 0; k <= cfg.K; ++k)
    traj.states.push_back(AgentState::from_vec(x.segment<4>(state_off(k))));
  for (int k = 0; k < cfg.K; ++k)
    traj.inputs.push_back(ControlInput::from_vec(x.segment<2>(input_off(k))));
  return traj;
}

}  // namespace

SharedBoard init_board(const std::vector<AgentTask>& tasks, const AdmmConfig& cfg) {
  cfg.validate();
  const int N = static_cast<int>(tasks.size());
  if (N < 1) throw std::invalid_argument("admm: at least one agent required");

  SharedBoard board;
  board.agents.resize(static_cast<size_t>(N));
  std::vector<std::vector<Eigen::Vector2d>> lines(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i)
    lines[static_cast<size_t>(i)] =
        line_positions(tasks[static_cast<size_t>(i)].x0, tasks[static_cast<size_t>(i)].target,
                       cfg.K);

  const std::vector<Eigen::Vector2d> zeros(static_cast<size_t>(cfg.K) + 1,
                                           Eigen::Vector2d::Zero());
  for (int i = 0; i < N; ++i) {
    AgentSlot& slot = board.agents[static_cast<size_t>(i)];
    slot.p = lines[static_cast<size_t>(i)];
    slot.traj.dt = cfg.dt;
    for (int k = 0; k <= cfg.K; ++k) {
      const Eigen::Vector2d& q = lines[static_cast<size_t>(i)][static_cast<size_t>(k)];
      slot.traj.states.push_back({q.x(), q.y(), 0.0, 0.0});
      if (k < cfg.K) slot.traj.inputs.push_back({0.0, 0.0});
    }
    slot.cs.z_self = lines[static_cast<size_t>(i)];
    slot.cs.lam_self = zeros;
    slot.cs.z_other.resize(static_cast<size_t>(N));
    slot.cs.lam_other.resize(static_cast<size_t>(N));
    for (int j = 0; j < N; ++j) {
      if (j == i) continue;
      slot.cs.z_other[static_cast<size_t>(j)] = lines[static_cast<size_t>(j)];
      slot.cs.lam_other[static_cast<size_t>(j)] = zeros;
    }
  }
  return board;
}

KnotTrajectory x_update(int agent_id, const AgentState& x0, const AgentState& target,
                        const SharedBoard& board, const AdmmConfig& cfg,
                        const AgentParams& params, const Rect* rect,
                        std::unique_ptr<QcqpSolver>* reuse) {
  if (agent_id < 0 || agent_id >= board.num_agents())
    throw std::invalid_argument("admm: agent id out of range");

  SolveOptions opts;
  opts.max_iter = 2000;  // a cold start can activate most of the balls at once
  SolveReport rep;
  if (reuse == nullptr || *reuse == nullptr) {
    DenseQcqp p = build_tracking_qcqp(agent_id, x0, target, board, cfg, params, rect);
    if (reuse != nullptr) {
      *reuse = std::make_unique<QcqpSolver>(std::move(p), opts);
      rep = (*reuse)->solve();
    } else {
      QcqpSolver solver(std::move(p), opts);
      rep = solver.solve();
    }
  } else {
    QcqpSolver& solver = **reuse;
    solver.set_gradient(tracking_gradient(agent_id, target, board, cfg));
    Eigen::VectorXd eqb = Eigen::VectorXd::Zero(4 * (cfg.K + 1));
    eqb.head<4>() = x0.vec();
    solver.set_eq_rhs(eqb);
    const double v0 = x0.vel().norm();
    for (int k = 1; k <= cfg.K; ++k) {
      const double r = relaxed_speed_limit(v0, k, cfg.dt, params);
      if (solver.problem().balls[static_cast<size_t>(k - 1)].radius != r)
        solver.set_ball(k - 1, Eigen::Vector2d::Zero(), r);
    }
    if (rect != nullptr) {
      const Eigen::VectorXd rhs = arena_rhs(shrink_rect(*rect, params), x0, cfg.dt, cfg.K, params);
      for (int r = 0; r < rhs.size(); ++r)
        if (solver.problem().inb(r) != rhs(r)) solver.set_ineq_rhs(r, rhs(r));
    }
    rep = solver.solve();
    if (rep.status == SolveStatus::max_iter) {
      solver.reset_warm_start();
      rep = solver.solve();
    }
  }

  if (rep.status == SolveStatus::infeasible || rep.kkt_feasibility > 1e-8) {
    {  // TEMP DEBUG: dump the failing problem for standalone replay
      const DenseQcqp& p = (reuse && *reuse) ? (*reuse)->problem()
                                             : build_tracking_qcqp(agent_id, x0, target, board,
                                                                   cfg, params, rect);
      FILE* f = std::fopen("/tmp/failing_qcqp.txt", "w");
      std::fprintf(f, "%d %d %d %d\n", p.n, (int)p.eqA.rows(), (int)p.inA.rows(),
                   (int)p.balls.size());
      auto dump_mat = [&](const Eigen::MatrixXd& M) {
        for (int r = 0; r < M.rows(); ++r) {
          for (int c = 0; c < M.cols(); ++c) std::fprintf(f, "%.17g ", M(r, c));
          std::fprintf(f, "\n");
        }
      };
      auto dump_vec = [&](const Eigen::VectorXd& v) {
        for (int i = 0; i < v.size(); ++i) std::fprintf(f, "%.17g ", v(i));
        std::fprintf(f, "\n");
      };
      dump_mat(p.H); dump_vec(p.g); dump_mat(p.eqA); dump_vec(p.eqb);
      dump_mat(p.inA); dump_vec(p.inb);
      for (const auto& b : p.balls) {
        std::fprintf(f, "%d ", (int)b.idx.size());
        for (int i : b.idx) std::fprintf(f, "%d ", i);
        std::fprintf(f, "\n"); dump_vec(b.center);
        std::fprintf(f, "%.17g\n", b.radius);
      }
      std::fclose(f);
    }
    throw std::runtime_error("admm: tracking solve for agent " + std::to_string(agent_id) +
                             " ended " + to_string(rep.status));
  }
  if (rep.status != SolveStatus::optimal)
    SWARMPLAN_LOG_INFO("admm: accepting feasible non-optimal tracking solve for agent " +
                       std::to_string(agent_id));
  return extract_trajectory(rep.x, cfg);
}

ConsensusSet z_update(int agent_id, const SharedBoard& board, const AdmmConfig& cfg,
                      const AgentParams& params) {
  if (agent_id < 0 || agent_id >= board.num_agents())
    throw std::invalid_argument("admm: agent id out of range");
  const int N = board.num_agents();
  const double d = params.min_separation();
  const AgentSlot& own = board.agents[static_cast<size_t>(agent_id)];

  ConsensusSet out = own.cs;
  std::vector<int> others;
  for (int j = 0; j < N; ++j)
    if (j != agent_id) others.push_back(j);

  for (int k = 0; k <= cfg.K; ++k) {
    Eigen::Vector2d a =
        own.p[static_cast<size_t>(k)] + own.cs.lam_self[static_cast<size_t>(k)] / cfg.mu;
    std::vector<Eigen::Vector2d> b(static_cast<size_t>(N));
    for (int j : others)
      b[static_cast<size_t>(j)] =
          board.agents[static_cast<size_t>(j)].p[static_cast<size_t>(k)] +
          own.cs.lam_other[static_cast<size_t>(j)][static_cast<size_t>(k)] / cfg.mu;

    std::vector<int> order = others;
    for (int sweep = 0; sweep < 50; ++sweep) {
      // nearest pair first: a label-free visiting order, ties by id
      std::sort(order.begin(), order.end(), [&](int x, int y) {
        const double dx = (a - b[static_cast<size_t>(x)]).norm();
        const double dy = (a - b[static_cast<size_t>(y)]).norm();
        if (dx != dy) return dx < dy;
        return x < y;
      });
      double moved = 0.0;
      for (int j : order) {
        Eigen::Vector2d diff = a - b[static_cast<size_t>(j)];
        const double dist = diff.norm();
        if (dist >= d) continue;
        const Eigen::Vector2d dir =
            dist < 1e-15 ? Eigen::Vector2d::UnitX() : Eigen::Vector2d(diff / dist);
        const double delta = 0.5 * (d - dist);
        a += delta * dir;
        b[static_cast<size_t>(j)] -= delta * dir;
        moved = std::max(moved, delta);
      }
      if (moved < 1e-9) break;
    }

    out.z_self[static_cast<size_t>(k)] = a;
    for (int j : others)
      out.z_other[static_cast<size_t>(j)][static_cast<size_t>(k)] = b[static_cast<size_t>(j)];
  }
  return out;
}

ConsensusSet dual_update(int agent_id, const SharedBoard& board, const AdmmConfig& cfg) {
  if (agent_id < 0 || agent_id >= board.num_agents())
    throw std::invalid_argument("admm: agent id out of range");
  const AgentSlot& own = board.agents[static_cast<size_t>(agent_id)];
  ConsensusSet out = own.cs;
  for (int k = 0; k <= cfg.K; ++k) {
    out.lam_self[static_cast<size_t>(k)] +=
        cfg.mu * (own.p[static_cast<size_t>(k)] - own.cs.z_self[static_cast<size_t>(k)]);
    for (int j = 0; j < board.num_agents(); ++j) {
      if (j == agent_id) continue;
      out.lam_other[static_cast<size_t>(j)][static_cast<size_t>(k)] +=
          cfg.mu * (board.agents[static_cast<size_t>(j)].p[static_cast<size_t>(k)] -
                    own.cs.z_other[static_cast<size_t>(j)][static_cast<size_t>(k)]);
    }
  }
  return out;
}

void admm_round(const std::vector<AgentTask>& tasks, SharedBoard& board, const AdmmConfig& cfg,
                const AgentParams& params, std::vector<std::unique_ptr<QcqpSolver>>* solvers,
                RoundStats* stats) {
  using clock = std::chrono::steady_clock;
  const int N = board.num_agents();
  if (static_cast<int>(tasks.size()) != N)
    throw std::invalid_argument("admm: tasks and board disagree on agent count");
  if (solvers != nullptr && static_cast<int>(solvers->size()) != N)
    throw std::invalid_argument("admm: solver pool and board disagree on agent count");
  if (stats != nullptr) {
    stats->x_seconds.assign(static_cast<size_t>(N), 0.0);
    stats->z_seconds.assign(static_cast<size_t>(N), 0.0);
  }
  const int iter = board.iter + 1;

  // Phase 1 reads only consensus data and writes only p, so agents are
  // independent; results are published together to keep the snapshot clean.
  std::vector<KnotTrajectory> trajs(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    const AgentTask& t = tasks[static_cast<size_t>(i)];
    const auto t0 = clock::now();
    try {
      trajs[static_cast<size_t>(i)] =
          x_update(i, t.x0, t.target, board, cfg, params, t.rect ? &*t.rect : nullptr,
                   solvers ? &(*solvers)[static_cast<size_t>(i)] : nullptr);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + " (control step " +
                               std::to_string(board.mpc_step) + ", round " +
                               std::to_string(iter) + ")");
    }
    if (stats != nullptr)
      stats->x_seconds[static_cast<size_t>(i)] =
          std::chrono::duration<double>(clock::now() - t0).count();
  }
  for (int i = 0; i < N; ++i) {
    AgentSlot& slot = board.agents[static_cast<size_t>(i)];
    slot.traj = std::move(trajs[static_cast<size_t>(i)]);
    for (int k = 0; k <= cfg.K; ++k)
      slot.p[static_cast<size_t>(k)] = slot.traj.states[static_cast<size_t>(k)].pos();
    slot.p_stamp = {board.mpc_step, iter, 1};
  }

  // Phase 2 reads only p across agents; copies and duals stay slot-local.
  for (int i = 0; i < N; ++i) {
    AgentSlot& slot = board.agents[static_cast<size_t>(i)];
    const auto t0 = clock::now();
    ConsensusSet cs = z_update(i, board, cfg, params);
    slot.cs.z_self = std::move(cs.z_self);
    slot.cs.z_other = std::move(cs.z_other);
    ConsensusSet duals = dual_update(i, board, cfg);
    slot.cs.lam_self = std::move(duals.lam_self);
    slot.cs.lam_other = std::move(duals.lam_other);
    slot.z_stamp = {board.mpc_step, iter, 2};
    if (stats != nullptr)
      stats->z_seconds[static_cast<size_t>(i)] =
          std::chrono::duration<double>(clock::now() - t0).count();
  }

  board.iter = iter;
  if (stats != nullptr) stats->primal_residual = consensus_residual(board);
}

void pre_iterate(const std::vector<AgentTask>& tasks, SharedBoard& board, const AdmmConfig& cfg,
                 const AgentParams& params,
                 std::vector<std::unique_ptr<QcqpSolver>>* solvers) {
  for (int r = 0; r < cfg.m_pre; ++r) admm_round(tasks, board, cfg, params, solvers);
}

void shift_board(SharedBoard& board) {
  const auto shift = [](auto& v) {
    if (v.size() < 2) return;
    for (size_t k = 0; k + 1 < v.size(); ++k) v[k] = v[k + 1];
  };
  for (AgentSlot& slot : board.agents) {
    shift(slot.p);
    shift(slot.traj.states);
    shift(slot.traj.inputs);
    shift(slot.cs.z_self);
    shift(slot.cs.lam_self);
    for (auto& z : slot.cs.z_other) shift(z);
    for (auto& l : slot.cs.lam_other) shift(l);
  }
  ++board.mpc_step;
  board.iter = 0;
}

double consensus_residual(const SharedBoard& board) {
  double worst = 0.0;
  for (const AgentSlot& slot : board.agents)
    for (size_t k = 0; k < slot.p.size(); ++k)
      worst = std::max(worst, (slot.p[k] - slot.cs.z_self[k]).norm());
  return worst;
}

}  // namespace swarmplan
