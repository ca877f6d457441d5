#include "swarmplan/qsolve.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace swarmplan {

namespace {

constexpr double kReg = 1e-10;  // PSD safeguard added to H inside the solver
constexpr int kCutSlots = 8;    // accumulated supporting cuts kept per ball

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

void unite(std::vector<int>& parent, int a, int b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a != b) parent[std::max(a, b)] = std::min(a, b);
}

// Factorisation of the equality KKT matrix [[H+reg*I, eqA'],[eqA, 0]],
// split along connected components of the variable coupling graph. For
// multi-agent stacks this keeps factor sizes per agent (or smaller),
// since inequality rows never enter this matrix.
class KktCore {
 public:
  bool factor(const Eigen::MatrixXd& H, double reg, const Eigen::MatrixXd& eqA) {
    n_ = static_cast<int>(H.rows());
    me_ = static_cast<int>(eqA.rows());
    ok_ = true;
    zero_eq_.clear();

    std::vector<int> parent(n_);
    std::iota(parent.begin(), parent.end(), 0);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < i; ++j)
        if (H(i, j) != 0.0 || H(j, i) != 0.0) unite(parent, i, j);

    std::vector<int> eq_first(me_, -1);
    for (int r = 0; r < me_; ++r) {
      int first = -1;
      for (int j = 0; j < n_; ++j) {
        if (eqA(r, j) == 0.0) continue;
        if (first < 0)
          first = j;
        else
          unite(parent, first, j);
      }
      eq_first[r] = first;
      if (first < 0) zero_eq_.push_back(r);
    }

    std::vector<int> root_block(std::max(n_, 1), -1);
    blocks_.clear();
    for (int i = 0; i < n_; ++i) {
      const int r = find_root(parent, i);
      if (root_block[r] < 0) {
        root_block[r] = static_cast<int>(blocks_.size());
        blocks_.emplace_back();
      }
      blocks_[root_block[r]].vars.push_back(i);
    }
    for (int r = 0; r < me_; ++r) {
      if (eq_first[r] < 0) continue;  // all-zero row, handled via RHS check
      blocks_[root_block[find_root(parent, eq_first[r])]].eqs.push_back(r);
    }

    for (Block& blk : blocks_) {
      const int nb = static_cast<int>(blk.vars.size());
      const int mb = static_cast<int>(blk.eqs.size());
      blk.M0 = Eigen::MatrixXd::Zero(nb + mb, nb + mb);
      for (int a = 0; a < nb; ++a)
        for (int c = 0; c < nb; ++c) blk.M0(a, c) = H(blk.vars[a], blk.vars[c]);
      for (int e = 0; e < mb; ++e)
        for (int a = 0; a < nb; ++a) {
          const double v = eqA(blk.eqs[e], blk.vars[a]);
          blk.M0(nb + e, a) = v;
          blk.M0(a, nb + e) = v;
        }
      Eigen::MatrixXd M = blk.M0;
      for (int a = 0; a < nb; ++a) M(a, a) += reg;
      blk.lu.compute(M);
      if (!blk.lu.isInvertible()) ok_ = false;
    }
    return ok_;
  }

  bool ok() const { return ok_; }
  const std::vector<int>& zero_eq_rows() const { return zero_eq_; }

  // Solve [[H+reg*I, eqA'],[eqA, 0]] [x; y] = [bx; be]. Duals of all-zero
  // equality rows are reported as 0.
  void solve(const Eigen::VectorXd& bx, const Eigen::VectorXd& be, Eigen::VectorXd& x,
             Eigen::VectorXd& y) const {
    x.resize(n_);
    y = Eigen::VectorXd::Zero(me_);
    for (const Block& blk : blocks_) {
      const int nb = static_cast<int>(blk.vars.size());
      const int mb = static_cast<int>(blk.eqs.size());
      Eigen::VectorXd rhs(nb + mb);
      for (int a = 0; a < nb; ++a) rhs(a) = bx(blk.vars[a]);
      for (int e = 0; e < mb; ++e) rhs(nb + e) = be(blk.eqs[e]);
      Eigen::VectorXd sol = blk.lu.solve(rhs);
      // refine against the unregularised matrix to strip the reg bias; the
      // monotone check keeps the regularised answer when M0 is singular
      Eigen::VectorXd r = rhs - blk.M0 * sol;
      for (int pass = 0; pass < 2; ++pass) {
        const double rn = r.norm();
        if (rn <= 1e-16 * (1.0 + rhs.norm())) break;
        Eigen::VectorXd cand = sol + blk.lu.solve(r);
        Eigen::VectorXd rc = rhs - blk.M0 * cand;
        if (rc.norm() >= 0.5 * rn) break;
        sol.swap(cand);
        r.swap(rc);
      }
      for (int a = 0; a < nb; ++a) x(blk.vars[a]) = sol(a);
      for (int e = 0; e < mb; ++e) y(blk.eqs[e]) = sol(nb + e);
    }
  }

 private:
  struct Block {
    std::vector<int> vars;
    std::vector<int> eqs;
    Eigen::MatrixXd M0;  // KKT block without the reg safeguard
    Eigen::FullPivLU<Eigen::MatrixXd> lu;
  };

  int n_ = 0;
  int me_ = 0;
  bool ok_ = false;
  std::vector<Block> blocks_;
  std::vector<int> zero_eq_;
};

void check_shapes(const DenseQcqp& p) {
  if (p.n < 0) throw std::invalid_argument("qsolve: n must be >= 0");
  if (p.H.rows() != p.n || p.H.cols() != p.n) throw std::invalid_argument("qsolve: H shape");
  if (p.g.size() != p.n) throw std::invalid_argument("qsolve: g size");
  if (p.eqA.size() > 0 || p.eqb.size() > 0) {
    if (p.eqA.cols() != p.n || p.eqA.rows() != p.eqb.size())
      throw std::invalid_argument("qsolve: eqA/eqb shape");
  }
  if (p.inA.size() > 0 || p.inb.size() > 0) {
    if (p.inA.cols() != p.n || p.inA.rows() != p.inb.size())
      throw std::invalid_argument("qsolve: inA/inb shape");
  }
  for (const BallConstraint& b : p.balls) {
    if (b.radius <= 0.0 || !std::isfinite(b.radius))
      throw std::invalid_argument("qsolve: ball radius must be > 0");
    if (static_cast<int>(b.idx.size()) != b.center.size())
      throw std::invalid_argument("qsolve: ball idx/center size");
    for (int i : b.idx)
      if (i < 0 || i >= p.n) throw std::invalid_argument("qsolve: ball index out of range");
  }
}

}  // namespace

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

void DenseQcqp::validate() const {
  check_shapes(*this);
  if (!H.allFinite()) throw std::invalid_argument("qsolve: H has non-finite entries");
  if (!g.allFinite()) throw std::invalid_argument("qsolve: g has non-finite entries");
  if (eqA.size() > 0 && !(eqA.allFinite() && eqb.allFinite()))
    throw std::invalid_argument("qsolve: eqA/eqb has non-finite entries");
  if (inA.size() > 0 && !(inA.allFinite() && inb.allFinite()))
    throw std::invalid_argument("qsolve: inA/inb has non-finite entries");
  if (n == 0) return;
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::invalid_argument("qsolve: H must be symmetric");
  if (n <= 256) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()),
                                                      Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-8 * scale)
      throw std::invalid_argument("qsolve: H must be positive semidefinite");
  }
}

Eigen::VectorXd project_ball(const Eigen::VectorXd& x, const Eigen::VectorXd& c, double r) {
  const double d = (x - c).norm();
  if (d <= r) return x;
  return c + (r / d) * (x - c);
}

SolveReport solve_eq_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                        const Eigen::MatrixXd& eqA, const Eigen::VectorXd& eqb) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(eqA.rows());
  SolveReport rep;
  rep.x = Eigen::VectorXd::Zero(n);
  rep.eq_dual = Eigen::VectorXd::Zero(m);
  rep.in_dual = Eigen::VectorXd::Zero(0);
  rep.ball_dual = Eigen::VectorXd::Zero(0);

  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = H;
  if (m > 0) {
    K.topRightCorner(n, m) = eqA.transpose();
    K.bottomLeftCorner(m, n) = eqA;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (!lu.isInvertible()) {
    rep.status = SolveStatus::infeasible;
    return rep;
  }
  Eigen::VectorXd rhs(n + m);
  rhs.head(n) = -g;
  if (m > 0) rhs.tail(m) = eqb;
  const Eigen::VectorXd sol = lu.solve(rhs);
  rep.x = sol.head(n);
  rep.eq_dual = sol.tail(m);
  rep.iterations = 1;
  Eigen::VectorXd st = H * rep.x + g;
  if (m > 0) st += eqA.transpose() * rep.eq_dual;
  rep.kkt_stationarity = st.norm();
  rep.kkt_feasibility = m > 0 ? (eqA * rep.x - eqb).cwiseAbs().maxCoeff() : 0.0;
  rep.kkt_complementarity = 0.0;
  rep.status = SolveStatus::optimal;
  return rep;
}

struct QcqpSolver::Impl {
  DenseQcqp p;
  SolveOptions opts;
  KktCore core;
  bool core_ok = false;

  int n = 0, me = 0, mi = 0, nballs = 0, nrows = 0;

  // Unified inequality rows: inA rows first, then kCutSlots supporting-cut
  // slots per ball (disabled until the ball is first violated). Cuts
  // accumulate; replacing a single cut per round zigzags between tangent
  // planes and never closes the violation.
  Eigen::MatrixXd R;
  Eigen::VectorXd rb;
  std::vector<char> enabled;
  std::vector<std::uint64_t> version;
  std::vector<int> cut_cursor;  // round-robin overwrite position per ball

  std::vector<Eigen::VectorXd> colx, coly;  // cached K0^{-1} [a'; 0] per row
  std::vector<std::uint64_t> colver;

  bool base_dirty = true;
  Eigen::VectorXd x0, y0;

  std::vector<int> W;  // working set (row ids)

  Eigen::VectorXd x, y, nu;  // last working-set solve
  Eigen::VectorXd mu;        // per-ball dual, squared-form convention

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> eq_cod;
  bool eq_cod_ready = false;

  int cut_ball(int row) const { return (row - mi) / kCutSlots; }

  explicit Impl(DenseQcqp prob, SolveOptions o) : p(std::move(prob)), opts(o) {
    check_shapes(p);
    if (opts.max_iter < 1) opts.max_iter = 1;
    n = p.n;
    if (p.eqA.size() == 0) {
      p.eqA.resize(0, n);
      p.eqb.resize(0);
    }
    if (p.inA.size() == 0) {
      p.inA.resize(0, n);
      p.inb.resize(0);
    }
    me = static_cast<int>(p.eqA.rows());
    mi = static_cast<int>(p.inA.rows());
    nballs = static_cast<int>(p.balls.size());
    nrows = mi + nballs * kCutSlots;
    core_ok = core.factor(p.H, kReg, p.eqA);
    R = Eigen::MatrixXd::Zero(nrows, n);
    rb = Eigen::VectorXd::Ones(nrows);
    if (mi > 0) {
      R.topRows(mi) = p.inA;
      rb.head(mi) = p.inb;
    }
    enabled.assign(nrows, 1);
    for (int j = mi; j < nrows; ++j) enabled[j] = 0;
    cut_cursor.assign(nballs, 0);
    version.assign(nrows, 0);
    colx.resize(nrows);
    coly.resize(nrows);
    colver.assign(nrows, ~0ull);
    mu = Eigen::VectorXd::Zero(nballs);
    x = Eigen::VectorXd::Zero(n);
    y = Eigen::VectorXd::Zero(me);
  }

  void ensure_base() {
    if (!base_dirty) return;
    core.solve(-p.g, p.eqb, x0, y0);
    base_dirty = false;
  }

  void ensure_col(int j) {
    if (colver[j] == version[j]) return;
    const Eigen::VectorXd be = Eigen::VectorXd::Zero(me);
    core.solve(R.row(j).transpose(), be, colx[j], coly[j]);
    colver[j] = version[j];
  }

  // Solve with the working set treated as equalities via a Schur
  // complement over cached K0^{-1} columns. Returns false when the Schur
  // matrix is singular; bad_idx then points at the entry to evict.
  bool solve_with_ws(int* bad_idx) {
    const int k = static_cast<int>(W.size());
    if (k == 0) {
      x = x0;
      y = y0;
      nu.resize(0);
      return true;
    }
    for (int i : W) ensure_col(i);
    Eigen::MatrixXd S(k, k);
    Eigen::VectorXd rhs(k);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j <= i; ++j) {
        const double v = R.row(W[i]).dot(colx[W[j]]);
        S(i, j) = v;
        S(j, i) = v;
      }
      rhs(i) = R.row(W[i]).dot(x0) - rb(W[i]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
    if (!lu.isInvertible()) {
      const Eigen::MatrixXd ker = lu.kernel();
      const Eigen::VectorXd kv = ker.col(0).cwiseAbs();
      const double thresh = 1e-9 * std::max(1.0, kv.maxCoeff());
      int evict = k - 1;
      for (int i = k - 1; i >= 0; --i)
        if (kv(i) > thresh) {
          evict = i;
          break;
        }
      *bad_idx = evict;
      return false;
    }
    nu = lu.solve(rhs);
    x = x0;
    y = y0;
    for (int i = 0; i < k; ++i) {
      x -= nu(i) * colx[W[i]];
      y -= nu(i) * coly[W[i]];
    }
    return true;
  }

  // Re-solve for the current working set, dropping negative multipliers
  // and dependent rows until the state is dual feasible. Returns false on
  // iteration budget.
  bool restore_ws(int& iters) {
    const double drop_tol = 0.25 * opts.tol;
    for (;;) {
      if (iters >= opts.max_iter) return false;
      ++iters;
      int bad = -1;
      if (!solve_with_ws(&bad)) {
        const int row = W[bad];
        W.erase(W.begin() + bad);
        if (row >= mi) enabled[row] = 0;  // dependent cut: retire the slot
        continue;
      }
      if (nu.size() > 0) {
        Eigen::Index worst;
        if (nu.minCoeff(&worst) < -drop_tol) {
          W.erase(W.begin() + worst);
          continue;
        }
      }
      return true;
    }
  }

  // Dual active-set pass (Goldfarb-Idnani flavoured, on the Schur system
  // over cached K0^{-1} columns): picks the most violated row, then takes
  // primal/dual ratio-test steps until the row enters or infeasibility is
  // certified. 0 optimal for the current linearisation, 1 infeasible,
  // 2 budget hit.
  int active_set(int& iters) {
    const double add_tol = 0.25 * opts.tol;
    if (!restore_ws(iters)) return 2;
    for (;;) {
      if (iters >= opts.max_iter) return 2;

      int r = -1;
      double viol_r = add_tol;
      if (nrows > 0) {
        const Eigen::VectorXd viol = R * x - rb;
        for (int j = 0; j < nrows; ++j) {
          if (!enabled[j] || viol(j) <= viol_r) continue;
          if (std::find(W.begin(), W.end(), j) != W.end()) continue;
          viol_r = viol(j);
          r = j;
        }
      }
      if (r < 0) return 0;
      ensure_col(r);
      const double sigma = R.row(r).dot(colx[r]);

      for (;;) {
        if (iters >= opts.max_iter) return 2;
        ++iters;
        const int k = static_cast<int>(W.size());
        Eigen::VectorXd dual_dir(k);
        if (k > 0) {
          Eigen::MatrixXd S(k, k);
          Eigen::VectorXd s(k);
          for (int i = 0; i < k; ++i) {
            ensure_col(W[i]);
            for (int j = 0; j <= i; ++j) {
              const double v = R.row(W[i]).dot(colx[W[j]]);
              S(i, j) = v;
              S(j, i) = v;
            }
            s(i) = R.row(W[i]).dot(colx[r]);
          }
          dual_dir = S.ldlt().solve(s);
        }

        double prim_rate = sigma;
        for (int i = 0; i < k; ++i) prim_rate -= dual_dir(i) * R.row(W[i]).dot(colx[r]);

        // ratio test on the working-set multipliers
        double t_dual = std::numeric_limits<double>::infinity();
        int leave = -1;
        for (int i = 0; i < k; ++i) {
          if (dual_dir(i) <= 1e-14) continue;
          const double t = std::max(0.0, nu(i)) / dual_dir(i);
          if (t < t_dual) {
            t_dual = t;
            leave = i;
          }
        }

        if (prim_rate <= 1e-13 * (1.0 + std::abs(sigma))) {
          // the row is dependent on the working set; if no multiplier can
          // give way the violated value is pinned for good
          if (leave < 0) return 1;
          for (int i = 0; i < k; ++i) nu(i) -= t_dual * dual_dir(i);
          W.erase(W.begin() + leave);
          removeRow(nu, leave);
          continue;
        }

        const double t_full = viol_r / prim_rate;
        const double t = std::min(t_full, t_dual);
        Eigen::VectorXd z = colx[r];
        Eigen::VectorXd zy = coly[r];
        for (int i = 0; i < k; ++i) {
          z -= dual_dir(i) * colx[W[i]];
          if (me > 0) zy -= dual_dir(i) * coly[W[i]];
        }
        x -= t * z;
        if (me > 0) y -= t * zy;
        for (int i = 0; i < k; ++i) nu(i) -= t * dual_dir(i);
        viol_r -= t * prim_rate;

        if (t_dual < t_full) {
          W.erase(W.begin() + leave);
          removeRow(nu, leave);
          continue;
        }
        W.push_back(r);
        if (!restore_ws(iters)) return 2;
        break;
      }
    }
  }

  static void removeRow(Eigen::VectorXd& v, int i) {
    const int k = static_cast<int>(v.size());
    for (int j = i; j + 1 < k; ++j) v(j) = v(j + 1);
    v.conservativeResize(k - 1);
  }

  double ball_violation(int b) const {
    const BallConstraint& ball = p.balls[b];
    double s = 0.0;
    for (size_t t = 0; t < ball.idx.size(); ++t) {
      const double d = x(ball.idx[t]) - ball.center(t);
      s += d * d;
    }
    return std::sqrt(s) - ball.radius;
  }

  double worst_violation_at(const Eigen::VectorXd& v) const {
    double w = 0.0;
    if (me > 0) w = (p.eqA * v - p.eqb).cwiseAbs().maxCoeff();
    if (mi > 0) w = std::max(w, (p.inA * v - p.inb).maxCoeff());
    for (int b = 0; b < nballs; ++b) {
      const BallConstraint& ball = p.balls[b];
      double s = 0.0;
      for (size_t t = 0; t < ball.idx.size(); ++t) {
        const double d = v(ball.idx[t]) - ball.center(t);
        s += d * d;
      }
      w = std::max(w, std::sqrt(s) - ball.radius);
    }
    return w;
  }

  // Alternating projections over the original constraint sets, used as a
  // feasibility probe when the cut loop stalls. A persistent violation at
  // the limit point certifies an empty intersection.
  bool feasibility_probe() {
    if (me > 0 && !eq_cod_ready) {
      eq_cod.compute(p.eqA);
      eq_cod_ready = true;
    }
    Eigen::VectorXd v = x;
    for (int sweep = 0; sweep < 5000; ++sweep) {
      double moved = 0.0;
      if (me > 0) {
        const Eigen::VectorXd dv = eq_cod.solve(p.eqA * v - p.eqb);
        moved = std::max(moved, dv.cwiseAbs().maxCoeff());
        v -= dv;
      }
      for (int j = 0; j < mi; ++j) {
        const double viol = p.inA.row(j).dot(v) - p.inb(j);
        if (viol <= 0.0) continue;
        const double nrm2 = p.inA.row(j).squaredNorm();
        if (nrm2 <= 0.0) continue;
        v -= (viol / nrm2) * p.inA.row(j).transpose();
        moved = std::max(moved, viol / std::sqrt(nrm2));
      }
      for (int b = 0; b < nballs; ++b) {
        const BallConstraint& ball = p.balls[b];
        Eigen::VectorXd d(static_cast<Eigen::Index>(ball.idx.size()));
        for (size_t t = 0; t < ball.idx.size(); ++t) d(t) = v(ball.idx[t]) - ball.center(t);
        const double dist = d.norm();
        if (dist <= ball.radius) continue;
        const double pull = 1.0 - ball.radius / dist;
        for (size_t t = 0; t < ball.idx.size(); ++t) v(ball.idx[t]) -= pull * d(t);
        moved = std::max(moved, dist - ball.radius);
      }
      if (moved < 1e-15 * (1.0 + v.cwiseAbs().maxCoeff())) break;
    }
    return worst_violation_at(v) <= 1e-6 * (1.0 + v.cwiseAbs().maxCoeff());
  }

  void aim_cut(int b) {
    const BallConstraint& ball = p.balls[b];
    Eigen::VectorXd dir(static_cast<Eigen::Index>(ball.idx.size()));
    for (size_t t = 0; t < ball.idx.size(); ++t) dir(t) = x(ball.idx[t]) - ball.center(t);
    const double norm = dir.norm();
    if (norm <= 0.0) return;  // at the centre: strictly inside
    dir /= norm;

    Eigen::RowVectorXd row_vec = Eigen::RowVectorXd::Zero(n);
    for (size_t t = 0; t < ball.idx.size(); ++t) row_vec(ball.idx[t]) = dir(t);

    const int base = mi + b * kCutSlots;
    int slot = -1;
    for (int s = 0; s < kCutSlots; ++s) {
      const int r = base + s;
      if (!enabled[r]) {
        if (slot < 0) slot = r;
        continue;
      }
      // an existing cut in (almost) the same direction would only
      // duplicate a row and invite a singular basis
      if (R.row(r).dot(row_vec) > 1.0 - 1e-12) return;
    }
    if (slot < 0) {
      slot = base + cut_cursor[b];
      cut_cursor[b] = (cut_cursor[b] + 1) % kCutSlots;
      const auto it = std::find(W.begin(), W.end(), slot);
      if (it != W.end()) W.erase(it);  // content changes, its dual is void
    }
    R.row(slot) = row_vec;
    rb(slot) = dir.dot(ball.center) + ball.radius;
    enabled[slot] = 1;
    ++version[slot];
  }

  // Newton refinement of the nonlinear KKT system for the detected active
  // set, keeping ball constraints as true quadratics. Reuses the block
  // factorisation via a Woodbury correction for the mu-dependent Hessian
  // term plus a Schur complement over the active rows.
  bool polish(const std::vector<int>& act_lin, const std::vector<int>& act_balls, int& iters) {
    const int L = static_cast<int>(act_lin.size());
    const int B = static_cast<int>(act_balls.size());
    if (B == 0) return true;

    std::vector<int> coords;
    for (int b : act_balls)
      for (int i : p.balls[b].idx) coords.push_back(i);
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    const int q = static_cast<int>(coords.size());

    Eigen::MatrixXd Yx(n, q), Yy(me, q);
    for (int t = 0; t < q; ++t) {
      Eigen::VectorXd ex = Eigen::VectorXd::Zero(n);
      ex(coords[t]) = 1.0;
      Eigen::VectorXd cx, cy;
      core.solve(ex, Eigen::VectorXd::Zero(me), cx, cy);
      Yx.col(t) = cx;
      Yy.col(t) = cy;
    }

    Eigen::VectorXd px = x, py = y;
    Eigen::VectorXd pnu = Eigen::VectorXd::Zero(L);
    for (int i = 0; i < L; ++i) {
      const auto it = std::find(W.begin(), W.end(), act_lin[i]);
      const int pos = static_cast<int>(it - W.begin());
      if (it != W.end() && pos < nu.size()) pnu(i) = nu(pos);
    }
    // seed mu from the duals the ball's cuts carry at the current point
    Eigen::VectorXd pmu = Eigen::VectorXd::Zero(B);
    {
      const int kn = std::min<int>(static_cast<int>(W.size()), static_cast<int>(nu.size()));
      for (int i = 0; i < kn; ++i) {
        if (W[i] < mi || nu(i) <= 0.0) continue;
        const int b = cut_ball(W[i]);
        const auto it = std::find(act_balls.begin(), act_balls.end(), b);
        if (it == act_balls.end()) continue;
        const double dist = std::max(p.balls[b].radius, 1e-12);
        pmu(it - act_balls.begin()) += nu(i) / (2.0 * dist);
      }
    }

    auto residual = [&](const Eigen::VectorXd& cx, const Eigen::VectorXd& cy,
                        const Eigen::VectorXd& cnu, const Eigen::VectorXd& cmu,
                        Eigen::VectorXd& r1, Eigen::VectorXd& r2, Eigen::VectorXd& r34) {
      r1 = p.H * cx + p.g;
      if (me > 0) r1 += p.eqA.transpose() * cy;
      for (int i = 0; i < L; ++i) r1 += cnu(i) * R.row(act_lin[i]).transpose();
      for (int i = 0; i < B; ++i) {
        const BallConstraint& ball = p.balls[act_balls[i]];
        for (size_t t = 0; t < ball.idx.size(); ++t)
          r1(ball.idx[t]) += cmu(i) * 2.0 * (cx(ball.idx[t]) - ball.center(t));
      }
      if (me > 0)
        r2 = p.eqA * cx - p.eqb;
      else
        r2.resize(0);
      r34.resize(L + B);
      for (int i = 0; i < L; ++i) r34(i) = R.row(act_lin[i]).dot(cx) - rb(act_lin[i]);
      for (int i = 0; i < B; ++i) {
        const BallConstraint& ball = p.balls[act_balls[i]];
        double s = 0.0;
        for (size_t t = 0; t < ball.idx.size(); ++t) {
          const double d = cx(ball.idx[t]) - ball.center(t);
          s += d * d;
        }
        r34(L + i) = s - ball.radius * ball.radius;
      }
    };

    auto fmax = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c) {
      double m = a.size() ? a.cwiseAbs().maxCoeff() : 0.0;
      if (b.size()) m = std::max(m, b.cwiseAbs().maxCoeff());
      if (c.size()) m = std::max(m, c.cwiseAbs().maxCoeff());
      return m;
    };

    Eigen::VectorXd r1, r2, r34;
    residual(px, py, pnu, pmu, r1, r2, r34);
    double fnorm = fmax(r1, r2, r34);

    for (int it = 0; it < 8 && fnorm > 1e-14; ++it) {
      ++iters;
      Eigen::VectorXd dvals = Eigen::VectorXd::Zero(q);
      for (int i = 0; i < B; ++i)
        for (int idx : p.balls[act_balls[i]].idx) {
          const int t = static_cast<int>(
              std::lower_bound(coords.begin(), coords.end(), idx) - coords.begin());
          dvals(t) += 2.0 * pmu(i);
        }
      std::vector<int> wb;
      for (int t = 0; t < q; ++t)
        if (dvals(t) > 1e-14) wb.push_back(t);
      const int qa = static_cast<int>(wb.size());
      Eigen::MatrixXd Minv;
      if (qa > 0) {
        Eigen::MatrixXd M(qa, qa);
        for (int a = 0; a < qa; ++a)
          for (int c = 0; c < qa; ++c) M(a, c) = Yx(coords[wb[c]], wb[a]);
        for (int a = 0; a < qa; ++a) M(a, a) += 1.0 / dvals(wb[a]);
        Minv = M.fullPivLu().inverse();
      }
      auto ktilde_solve = [&](const Eigen::VectorXd& bx, const Eigen::VectorXd& be,
                              Eigen::VectorXd& sx, Eigen::VectorXd& sy) {
        core.solve(bx, be, sx, sy);
        if (qa == 0) return;
        Eigen::VectorXd cz(qa);
        for (int a = 0; a < qa; ++a) cz(a) = sx(coords[wb[a]]);
        const Eigen::VectorXd wv = Minv * cz;
        for (int a = 0; a < qa; ++a) {
          sx -= Yx.col(wb[a]) * wv(a);
          if (me > 0) sy -= Yy.col(wb[a]) * wv(a);
        }
      };

      Eigen::MatrixXd G = Eigen::MatrixXd::Zero(L + B, n);
      for (int i = 0; i < L; ++i) G.row(i) = R.row(act_lin[i]);
      for (int i = 0; i < B; ++i) {
        const BallConstraint& ball = p.balls[act_balls[i]];
        for (size_t t = 0; t < ball.idx.size(); ++t)
          G(L + i, ball.idx[t]) = 2.0 * (px(ball.idx[t]) - ball.center(t));
      }

      Eigen::VectorXd tx, ty;
      ktilde_solve(Eigen::VectorXd(-r1), Eigen::VectorXd(-r2), tx, ty);
      const int kr = L + B;
      Eigen::MatrixXd Mx(n, kr), My(me, kr);
      for (int i = 0; i < kr; ++i) {
        Eigen::VectorXd sx, sy;
        ktilde_solve(G.row(i).transpose(), Eigen::VectorXd::Zero(me), sx, sy);
        Mx.col(i) = sx;
        if (me > 0) My.col(i) = sy;
      }
      Eigen::MatrixXd T = G * Mx;
      T = 0.5 * (T + T.transpose()).eval();
      // the active normals can be linearly dependent (an input ball chain
      // implying a velocity ball through the dynamics, say), so take the
      // minimum-norm multiplier step instead of demanding invertibility
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> tcod(T);
      tcod.setThreshold(1e-9);
      const Eigen::VectorXd dw = tcod.solve(G * tx + r34);
      const Eigen::VectorXd dx = tx - Mx * dw;
      const Eigen::VectorXd dy = me > 0 ? Eigen::VectorXd(ty - My * dw) : ty;

      double step = 1.0;
      bool accepted = false;
      for (int half = 0; half < 6; ++half) {
        const Eigen::VectorXd nx = px + step * dx;
        const Eigen::VectorXd ny = py + step * dy;
        const Eigen::VectorXd nnu = pnu + step * dw.head(L);
        const Eigen::VectorXd nmu = pmu + step * dw.tail(B);
        Eigen::VectorXd t1, t2, t34;
        residual(nx, ny, nnu, nmu, t1, t2, t34);
        const double fn = fmax(t1, t2, t34);
        if (fn <= (1.0 - 1e-4 * step) * fnorm || fn < 1e-14) {
          px = nx;
          py = ny;
          pnu = nnu;
          pmu = nmu;
          r1 = t1;
          r2 = t2;
          r34 = t34;
          fnorm = fn;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      // a rejected line search means we are at the attainable floor for this
      // system; keep the iterate and let the residual test decide
      if (!accepted) break;
    }
    if (fnorm > 0.5 * opts.tol) {
      if (std::getenv("QSOLVE_DEBUG"))
        std::fprintf(stderr, "[polish] floor fnorm=%.3e L=%d B=%d\n", fnorm, L, B);
      return false;
    }

    x = px;
    y = py;
    for (int i = 0; i < L; ++i) {
      const auto it = std::find(W.begin(), W.end(), act_lin[i]);
      const int pos = static_cast<int>(it - W.begin());
      if (it != W.end() && pos < nu.size()) nu(pos) = pnu(i);
    }
    for (int i = 0; i < B; ++i) mu(act_balls[i]) = pmu(i);
    // cut duals are superseded by mu; zero them so the report cannot
    // double-count a ball on both forms
    for (size_t i = 0; i < W.size() && static_cast<Eigen::Index>(i) < nu.size(); ++i)
      if (W[i] >= mi && mu(cut_ball(W[i])) != 0.0) nu(i) = 0.0;
    return true;
  }

  void fill_report(SolveReport& rep) {
    rep.x = x;
    rep.eq_dual = y;
    rep.in_dual = Eigen::VectorXd::Zero(mi);
    rep.ball_dual = Eigen::VectorXd::Zero(nballs);
    const int kn = std::min<int>(static_cast<int>(W.size()), static_cast<int>(nu.size()));
    for (int i = 0; i < kn; ++i) {
      const int row = W[i];
      const double v = std::max(0.0, nu(i));
      if (row < mi) {
        rep.in_dual(row) = v;
      } else if (mu(cut_ball(row)) == 0.0) {
        const int b = cut_ball(row);
        const double dist = std::max(p.balls[b].radius + ball_violation(b), 1e-12);
        rep.ball_dual(b) += v / (2.0 * dist);
      }
    }
    for (int b = 0; b < nballs; ++b)
      if (mu(b) != 0.0) rep.ball_dual(b) = std::max(0.0, mu(b));

    Eigen::VectorXd st = p.H * x + p.g;
    if (me > 0) st += p.eqA.transpose() * rep.eq_dual;
    if (mi > 0) st += p.inA.transpose() * rep.in_dual;
    double comp = 0.0;
    double feas = 0.0;
    for (int b = 0; b < nballs; ++b) {
      const BallConstraint& ball = p.balls[b];
      double s = 0.0;
      for (size_t t = 0; t < ball.idx.size(); ++t) {
        const double d = x(ball.idx[t]) - ball.center(t);
        st(ball.idx[t]) += rep.ball_dual(b) * 2.0 * d;
        s += d * d;
      }
      const double cval = s - ball.radius * ball.radius;
      feas = std::max(feas, cval);
      comp = std::max(comp, std::abs(rep.ball_dual(b) * cval));
    }
    if (me > 0) feas = std::max(feas, (p.eqA * x - p.eqb).cwiseAbs().maxCoeff());
    if (mi > 0) {
      const Eigen::VectorXd rv = p.inA * x - p.inb;
      feas = std::max(feas, rv.maxCoeff());
      for (int j = 0; j < mi; ++j) comp = std::max(comp, std::abs(rep.in_dual(j) * rv(j)));
    }
    rep.kkt_stationarity = st.norm();
    rep.kkt_feasibility = std::max(0.0, feas);
    rep.kkt_complementarity = comp;
  }

  SolveReport run() {
    SolveReport rep;
    rep.eq_dual = Eigen::VectorXd::Zero(me);
    rep.in_dual = Eigen::VectorXd::Zero(mi);
    rep.ball_dual = Eigen::VectorXd::Zero(nballs);
    rep.x = Eigen::VectorXd::Zero(n);
    if (!core_ok) {
      rep.status = SolveStatus::infeasible;
      return rep;
    }
    for (int r : core.zero_eq_rows()) {
      if (std::abs(p.eqb(r)) > opts.tol) {
        rep.status = SolveStatus::infeasible;
        return rep;
      }
    }
    ensure_base();
    mu.setZero();

    W.erase(std::remove_if(W.begin(), W.end(),
                           [&](int r) { return r < 0 || r >= nrows || !enabled[r]; }),
            W.end());
    std::sort(W.begin(), W.end());
    W.erase(std::unique(W.begin(), W.end()), W.end());

    int iters = 0;
    bool budget_hit = false;
    const double cut_tol = 1e-7;
    double prev_worst = std::numeric_limits<double>::infinity();
    int stalled = 0;

    const bool dbg = std::getenv("QSOLVE_DEBUG") != nullptr;
    for (int attempt = 0; attempt < 6; ++attempt) {
      for (int outer = 0; outer < 100; ++outer) {
        const int st = active_set(iters);
        if (st == 1) {
          fill_report(rep);
          rep.status = SolveStatus::infeasible;
          rep.iterations = iters;
          return rep;
        }
        if (st == 2) {
          budget_hit = true;
          break;
        }
        double worst = 0.0;
        for (int b = 0; b < nballs; ++b) worst = std::max(worst, ball_violation(b));
        if (dbg)
          std::fprintf(stderr, "[run] attempt=%d outer=%d iters=%d worst=%.3e stalled=%d\n",
                       attempt, outer, iters, worst, stalled);
        if (worst <= cut_tol) break;
        stalled = worst > prev_worst - 1e-12 ? stalled + 1 : 0;
        prev_worst = std::min(prev_worst, worst);
        if (stalled >= 6) {
          if (!feasibility_probe()) {
            fill_report(rep);
            rep.status = SolveStatus::infeasible;
            rep.iterations = iters;
            return rep;
          }
          stalled = 0;
        }
        for (int b = 0; b < nballs; ++b)
          if (ball_violation(b) > 0.0) aim_cut(b);
      }
      if (budget_hit) break;

      std::vector<int> act_lin, act_balls;
      const int kn = std::min<int>(static_cast<int>(W.size()), static_cast<int>(nu.size()));
      for (int i = 0; i < kn; ++i) {
        if (nu(i) <= 1e-11) continue;
        if (W[i] < mi)
          act_lin.push_back(W[i]);
        else
          act_balls.push_back(cut_ball(W[i]));
      }
      for (int b = 0; b < nballs; ++b)
        if (ball_violation(b) > 0.25 * opts.tol &&
            std::find(act_balls.begin(), act_balls.end(), b) == act_balls.end())
          act_balls.push_back(b);
      std::sort(act_balls.begin(), act_balls.end());
      act_balls.erase(std::unique(act_balls.begin(), act_balls.end()), act_balls.end());
      if (act_balls.empty()) break;

      if (dbg) {
        std::fprintf(stderr, "[run] attempt=%d polish L=%zu B=%zu balls:", attempt,
                     act_lin.size(), act_balls.size());
        for (int b : act_balls) std::fprintf(stderr, " %d(v=%.2e)", b, ball_violation(b));
        std::fprintf(stderr, "\n");
      }
      if (!polish(act_lin, act_balls, iters)) break;

      // a negative multiplier flags a constraint that is actually inactive
      bool redo = false;
      for (int b : act_balls)
        if (mu(b) < -0.25 * opts.tol) {
          mu(b) = 0.0;
          for (int s = 0; s < kCutSlots; ++s) {
            const int row = mi + b * kCutSlots + s;
            enabled[row] = 0;
            const auto it = std::find(W.begin(), W.end(), row);
            if (it != W.end()) W.erase(it);
          }
          redo = true;
        }
      for (int r : act_lin) {
        const auto it = std::find(W.begin(), W.end(), r);
        const int pos = static_cast<int>(it - W.begin());
        if (it != W.end() && pos < nu.size() && nu(pos) < -0.25 * opts.tol) {
          W.erase(it);
          redo = true;
        }
      }
      if (redo) continue;

      // the polished point must not break constraints left out of the set
      bool broke = false;
      if (nrows > 0) {
        const Eigen::VectorXd viol = R * x - rb;
        for (int j = 0; j < nrows && !broke; ++j) {
          if (!enabled[j]) continue;
          if (std::find(W.begin(), W.end(), j) != W.end()) continue;
          if (viol(j) > 0.25 * opts.tol) broke = true;
        }
      }
      for (int b = 0; b < nballs && !broke; ++b)
        if (std::find(act_balls.begin(), act_balls.end(), b) == act_balls.end() &&
            ball_violation(b) > 0.25 * opts.tol)
          broke = true;
      if (!broke) break;
      for (int b = 0; b < nballs; ++b)
        if (ball_violation(b) > 0.0) aim_cut(b);
    }

    fill_report(rep);
    rep.iterations = iters;
    const double scale = 1.0 + p.g.norm();
    const bool ok = rep.kkt_feasibility <= opts.tol && rep.kkt_stationarity <= opts.tol * scale &&
                    rep.kkt_complementarity <= opts.tol * scale;
    rep.status = ok ? SolveStatus::optimal : SolveStatus::max_iter;
    return rep;
  }
};

QcqpSolver::QcqpSolver(DenseQcqp p, SolveOptions opts)
    : impl_(std::make_unique<Impl>(std::move(p), opts)) {}
QcqpSolver::~QcqpSolver() = default;
QcqpSolver::QcqpSolver(QcqpSolver&&) noexcept = default;
QcqpSolver& QcqpSolver::operator=(QcqpSolver&&) noexcept = default;

void QcqpSolver::set_gradient(const Eigen::VectorXd& g) {
  if (g.size() != impl_->n) throw std::invalid_argument("qsolve: gradient size");
  impl_->p.g = g;
  impl_->base_dirty = true;
}

void QcqpSolver::set_eq_rhs(const Eigen::VectorXd& eqb) {
  if (eqb.size() != impl_->me) throw std::invalid_argument("qsolve: eqb size");
  impl_->p.eqb = eqb;
  impl_->base_dirty = true;
}

void QcqpSolver::set_ineq_row(int row, const Eigen::RowVectorXd& a, double b) {
  if (row < 0 || row >= impl_->mi) throw std::invalid_argument("qsolve: row out of range");
  if (a.size() != impl_->n) throw std::invalid_argument("qsolve: row size");
  impl_->p.inA.row(row) = a;
  impl_->p.inb(row) = b;
  impl_->R.row(row) = a;
  impl_->rb(row) = b;
  ++impl_->version[row];
}

void QcqpSolver::set_ineq_rhs(int row, double b) {
  if (row < 0 || row >= impl_->mi) throw std::invalid_argument("qsolve: row out of range");
  impl_->p.inb(row) = b;
  impl_->rb(row) = b;
}

void QcqpSolver::set_ball(int id, const Eigen::VectorXd& center, double radius) {
  if (id < 0 || id >= impl_->nballs) throw std::invalid_argument("qsolve: ball id");
  BallConstraint& ball = impl_->p.balls[id];
  if (center.size() != static_cast<Eigen::Index>(ball.idx.size()))
    throw std::invalid_argument("qsolve: ball center size");
  if (radius <= 0.0 || !std::isfinite(radius))
    throw std::invalid_argument("qsolve: ball radius must be > 0");
  ball.center = center;
  ball.radius = radius;
  auto& W = impl_->W;
  for (int s = 0; s < kCutSlots; ++s) {
    const int row = impl_->mi + id * kCutSlots + s;
    impl_->enabled[row] = 0;
    ++impl_->version[row];
    const auto it = std::find(W.begin(), W.end(), row);
    if (it != W.end()) W.erase(it);
  }
}

const DenseQcqp& QcqpSolver::problem() const { return impl_->p; }

SolveReport QcqpSolver::solve() { return impl_->run(); }

void QcqpSolver::reset_warm_start() { impl_->W.clear(); }

void QcqpSolver::set_warm_rows(const std::vector<int>& rows) { impl_->W = rows; }

std::vector<int> QcqpSolver::working_set() const { return impl_->W; }

SolveReport solve_convex_qcqp(const DenseQcqp& p, const SolveOptions& opts, QcqpWarmStart* warm) {
  QcqpSolver solver(p, opts);
  if (warm != nullptr) solver.set_warm_rows(warm->rows);
  SolveReport rep = solver.solve();
  if (warm != nullptr) warm->rows = solver.working_set();
  return rep;
}

}  // namespace swarmplan
