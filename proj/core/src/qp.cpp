#include "peermarket/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <functional>
#include <sstream>

namespace peermarket {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

struct KktSystem {
  const QpProblem& qp;
  double delta = 1e-11;

  // Solves the reduced Newton system for (dx, dy) given the diagonal
  // scaling d = z / s of the inequality block.
  Eigen::PartialPivLU<MatrixXd> factor(const VectorXd& d) const {
    const Index n = qp.num_vars();
    const Index p = qp.num_eq();
    MatrixXd k(n + p, n + p);
    k.topLeftCorner(n, n) = qp.P;
    if (qp.num_ineq() > 0) {
      k.topLeftCorner(n, n).noalias() += qp.A_ineq.transpose() * d.asDiagonal() * qp.A_ineq;
    }
    k.topLeftCorner(n, n).diagonal().array() += delta;
    if (p > 0) {
      k.topRightCorner(n, p) = qp.A_eq.transpose();
      k.bottomLeftCorner(p, n) = qp.A_eq;
      k.bottomRightCorner(p, p) = -delta * MatrixXd::Identity(p, p);
    }
    return Eigen::PartialPivLU<MatrixXd>(k);
  }
};

struct Iterate {
  VectorXd x, s, z, y;
};

struct Direction {
  VectorXd dx, ds, dz, dy;
};

double max_step(const VectorXd& v, const VectorXd& dv) {
  double alpha = 1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  }
  return alpha;
}

Direction newton(const QpProblem& qp, const Eigen::PartialPivLU<MatrixXd>& lu, const Iterate& it,
                 const VectorXd& rd, const VectorXd& rp, const VectorXd& re, const VectorXd& rc) {
  const Index n = qp.num_vars();
  const Index m = qp.num_ineq();
  const Index p = qp.num_eq();
  // dz = S⁻¹(−rc + Z rp + Z A dx)
  VectorXd w = VectorXd::Zero(m);
  if (m > 0) w = (-rc.array() + it.z.array() * rp.array()) / it.s.array();
  VectorXd rhs(n + p);
  rhs.head(n) = -rd;
  if (m > 0) rhs.head(n).noalias() -= qp.A_ineq.transpose() * w;
  if (p > 0) rhs.tail(p) = -re;
  VectorXd sol = lu.solve(rhs);
  Direction dir;
  dir.dx = sol.head(n);
  dir.dy = sol.tail(p);
  if (m > 0) {
    VectorXd adx = qp.A_ineq * dir.dx;
    dir.ds = -rp - adx;
    dir.dz = w.array() + it.z.array() * adx.array() / it.s.array();
  } else {
    dir.ds = VectorXd::Zero(0);
    dir.dz = VectorXd::Zero(0);
  }
  return dir;
}

struct IpmOutcome {
  Iterate it;
  int iterations = 0;
  bool converged = false;
  bool stopped_by_hook = false;
};

// Hook called with iterates that are close to optimal; returning true stops
// the iteration.
using IterateHook = std::function<bool(const Iterate&)>;

IpmOutcome interior_point(const QpProblem& qp, double tol, int max_iter, const IterateHook& hook = {}) {
  const Index n = qp.num_vars();
  const Index m = qp.num_ineq();
  const Index p = qp.num_eq();
  const double scale = 1.0 + std::max({inf_norm(qp.r), inf_norm(qp.b_ineq), inf_norm(qp.b_eq)});
  KktSystem kkt{qp, 1e-10 * scale};

  Iterate it;
  it.x = VectorXd::Zero(n);
  it.y = VectorXd::Zero(p);
  it.s = VectorXd::Ones(m);
  it.z = VectorXd::Ones(m);
  if (m > 0) {
    auto lu = kkt.factor(VectorXd::Ones(m));
    VectorXd rhs(n + p);
    rhs.head(n) = -qp.r + qp.A_ineq.transpose() * qp.b_ineq;
    if (p > 0) rhs.tail(p) = qp.b_eq;
    VectorXd sol = lu.solve(rhs);
    if (sol.allFinite()) {
      it.x = sol.head(n);
      it.y = sol.tail(p);
    }
    VectorXd slack = qp.b_ineq - qp.A_ineq * it.x;
    for (Index i = 0; i < m; ++i) it.s[i] = std::max(std::abs(slack[i]), 1.0);
  }

  IpmOutcome out;
  Iterate best = it;
  double best_merit = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= max_iter; ++k) {
    VectorXd rd = qp.P * it.x + qp.r;
    if (m > 0) rd.noalias() += qp.A_ineq.transpose() * it.z;
    if (p > 0) rd.noalias() += qp.A_eq.transpose() * it.y;
    VectorXd rp = m > 0 ? VectorXd(qp.A_ineq * it.x + it.s - qp.b_ineq) : VectorXd::Zero(0);
    VectorXd re = p > 0 ? VectorXd(qp.A_eq * it.x - qp.b_eq) : VectorXd::Zero(0);
    const double mu = m > 0 ? it.s.dot(it.z) / static_cast<double>(m) : 0.0;
    const double comp = m > 0 ? (it.s.array() * it.z.array()).maxCoeff() : 0.0;
    const double merit = std::max({inf_norm(rd), inf_norm(rp), inf_norm(re), comp});
    if (!std::isfinite(merit)) break;
    if (merit < best_merit) {
      best_merit = merit;
      best = it;
    }
    out.iterations = k;
    if (merit <= tol) {
      out.converged = true;
      break;
    }
    if (hook && merit <= 1e-4 * scale && hook(it)) {
      out.stopped_by_hook = true;
      break;
    }
    if (k == max_iter) break;
    if (inf_norm(it.x) > 1e12 * scale || inf_norm(it.z) > 1e14 * scale) break;

    VectorXd d = m > 0 ? VectorXd(it.z.array() / it.s.array()) : VectorXd::Zero(0);
    auto lu = kkt.factor(d);

    VectorXd rc = m > 0 ? VectorXd(it.s.array() * it.z.array()) : VectorXd::Zero(0);
    Direction aff = newton(qp, lu, it, rd, rp, re, rc);
    Direction dir = aff;
    if (m > 0) {
      const double ap = max_step(it.s, aff.ds);
      const double ad = max_step(it.z, aff.dz);
      const double mu_aff = (it.s + ap * aff.ds).dot(it.z + ad * aff.dz) / static_cast<double>(m);
      const double sigma = std::clamp(std::pow(mu_aff / mu, 3), 0.0, 1.0);
      rc = (it.s.array() * it.z.array() + aff.ds.array() * aff.dz.array() - sigma * mu).matrix();
      dir = newton(qp, lu, it, rd, rp, re, rc);
    }
    if (!dir.dx.allFinite() || !dir.dz.allFinite() || !dir.dy.allFinite()) break;
    double alpha = 1.0;
    if (m > 0) {
      const double eta = std::max(0.9, 1.0 - mu);
      // Quadratic objectives couple primal and dual steps; use a common length.
      alpha = std::min({1.0, eta * max_step(it.s, dir.ds), eta * max_step(it.z, dir.dz)});
    }
    it.x += alpha * dir.dx;
    it.s += alpha * dir.ds;
    it.z += alpha * dir.dz;
    it.y += alpha * dir.dy;
  }
  out.it = out.converged || out.stopped_by_hook ? it : best;
  return out;
}

// Re-solves the equality-constrained KKT system on the active set guessed from
// the interior-point iterate.
bool polish(const QpProblem& qp, const Iterate& it, VectorXd& x, VectorXd& z, VectorXd& y) {
  const Index n = qp.num_vars();
  const Index m = qp.num_ineq();
  const Index p = qp.num_eq();
  std::vector<Index> active;
  for (Index i = 0; i < m; ++i) {
    if (it.z[i] > it.s[i]) active.push_back(i);
  }
  const Index a = static_cast<Index>(active.size());
  MatrixXd k = MatrixXd::Zero(n + a + p, n + a + p);
  VectorXd rhs = VectorXd::Zero(n + a + p);
  k.topLeftCorner(n, n) = qp.P;
  rhs.head(n) = -qp.r;
  for (Index j = 0; j < a; ++j) {
    k.block(n + j, 0, 1, n) = qp.A_ineq.row(active[j]);
    k.block(0, n + j, n, 1) = qp.A_ineq.row(active[j]).transpose();
    rhs[n + j] = qp.b_ineq[active[j]];
  }
  if (p > 0) {
    k.block(n + a, 0, p, n) = qp.A_eq;
    k.block(0, n + a, n, p) = qp.A_eq.transpose();
    rhs.tail(p) = qp.b_eq;
  }
  // Start from the interior iterate and solve for the correction so that the
  // minimum-norm choice stays close to it on degenerate (non-unique) faces.
  VectorXd base(n + a + p);
  base.head(n) = it.x;
  for (Index j = 0; j < a; ++j) base[n + j] = it.z[active[j]];
  if (p > 0) base.tail(p) = it.y;
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(k);
  VectorXd sol = base + cod.solve(rhs - k * base);
  if (!sol.allFinite()) return false;
  x = sol.head(n);
  z = VectorXd::Zero(m);
  for (Index j = 0; j < a; ++j) z[active[j]] = std::max(sol[n + j], 0.0);
  y = sol.tail(p);
  return true;
}

std::optional<InfeasibilityCertificate> phase_one(const QpProblem& qp, double tol) {
  // minimize Σ e  s.t.  A x − e_A ≤ b,  E x − u + v = f,  e, u, v ≥ 0
  const Index n = qp.num_vars();
  const Index m = qp.num_ineq();
  const Index p = qp.num_eq();
  const Index nv = n + m + 2 * p;
  QpProblem lp = QpProblem::with_vars(nv);
  lp.P.diagonal().head(n).setConstant(1e-9);
  lp.r.segment(n, m + 2 * p).setOnes();
  lp.A_ineq = MatrixXd::Zero(m + m + 2 * p, nv);
  lp.b_ineq = VectorXd::Zero(m + m + 2 * p);
  if (m > 0) {
    lp.A_ineq.topLeftCorner(m, n) = qp.A_ineq;
    lp.A_ineq.block(0, n, m, m) = -MatrixXd::Identity(m, m);
    lp.b_ineq.head(m) = qp.b_ineq;
  }
  lp.A_ineq.block(m, n, m + 2 * p, m + 2 * p) = -MatrixXd::Identity(m + 2 * p, m + 2 * p);
  if (p > 0) {
    lp.A_eq = MatrixXd::Zero(p, nv);
    lp.A_eq.leftCols(n) = qp.A_eq;
    lp.A_eq.block(0, n + m, p, p) = -MatrixXd::Identity(p, p);
    lp.A_eq.block(0, n + m + p, p, p) = MatrixXd::Identity(p, p);
    lp.b_eq = qp.b_eq;
  } else {
    lp.A_eq = MatrixXd::Zero(0, nv);
  }
  IpmOutcome res = interior_point(lp, 1e-10, 200);
  const double violation = res.it.x.segment(n, m + 2 * p).sum();
  if (violation <= std::max(tol, 1e-7)) return std::nullopt;
  InfeasibilityCertificate cert;
  cert.y_ineq = res.it.z.head(m);
  cert.w_eq = res.it.y;
  VectorXd comb = VectorXd::Zero(n);
  if (m > 0) comb += qp.A_ineq.transpose() * cert.y_ineq;
  if (p > 0) comb += qp.A_eq.transpose() * cert.w_eq;
  cert.combination_residual = inf_norm(comb);
  cert.rhs_value = (m > 0 ? qp.b_ineq.dot(cert.y_ineq) : 0.0) + (p > 0 ? qp.b_eq.dot(cert.w_eq) : 0.0);
  return cert;
}

}  // namespace

QpProblem QpProblem::with_vars(Index n) {
  QpProblem qp;
  qp.P = MatrixXd::Zero(n, n);
  qp.r = VectorXd::Zero(n);
  qp.A_ineq = MatrixXd::Zero(0, n);
  qp.b_ineq = VectorXd::Zero(0);
  qp.A_eq = MatrixXd::Zero(0, n);
  qp.b_eq = VectorXd::Zero(0);
  return qp;
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::unbounded: return "unbounded";
    case QpStatus::max_iter: return "max_iter";
  }
  return "unknown";
}

double KktResiduals::max() const { return std::max({stationarity, primal, dual, complementarity}); }

void check_problem(const QpProblem& qp) {
  const Index n = qp.r.size();
  auto fail = [](const std::string& what) { throw QpError("invalid QP: " + what); };
  if (qp.P.rows() != n || qp.P.cols() != n) fail("P must be n×n with n = size(r)");
  if (qp.A_ineq.cols() != n || qp.A_ineq.rows() != qp.b_ineq.size()) fail("A_ineq/b_ineq dimensions");
  if (qp.A_eq.cols() != n || qp.A_eq.rows() != qp.b_eq.size()) fail("A_eq/b_eq dimensions");
  if (!qp.var_names.empty() && static_cast<Index>(qp.var_names.size()) != n) fail("var_names size");
  if (!qp.P.allFinite() || !qp.r.allFinite() || !qp.A_ineq.allFinite() || !qp.b_ineq.allFinite() ||
      !qp.A_eq.allFinite() || !qp.b_eq.allFinite()) {
    fail("non-finite entry");
  }
  if (n == 0) return;
  const double norm = qp.P.lpNorm<Eigen::Infinity>();
  if ((qp.P - qp.P.transpose()).lpNorm<Eigen::Infinity>() > 1e-12 * std::max(norm, 1.0)) {
    fail("P is not symmetric");
  }
  if (norm > 0.0) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(qp.P, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * norm) fail("P is not positive semidefinite");
  }
}

KktResiduals kkt_residuals(const QpProblem& qp, const VectorXd& x, const VectorXd& mult_ineq,
                           const VectorXd& mult_eq) {
  KktResiduals res;
  VectorXd grad = qp.P * x + qp.r;
  if (qp.num_ineq() > 0) grad.noalias() += qp.A_ineq.transpose() * mult_ineq;
  if (qp.num_eq() > 0) grad.noalias() += qp.A_eq.transpose() * mult_eq;
  res.stationarity = inf_norm(grad);
  if (qp.num_ineq() > 0) {
    VectorXd slack = qp.b_ineq - qp.A_ineq * x;
    res.primal = std::max(0.0, -slack.minCoeff());
    res.dual = std::max(0.0, -mult_ineq.minCoeff());
    res.complementarity = (mult_ineq.array() * slack.array()).abs().maxCoeff();
  }
  if (qp.num_eq() > 0) res.primal = std::max(res.primal, inf_norm(qp.A_eq * x - qp.b_eq));
  return res;
}

QpSolution solve(const QpProblem& problem, const QpOptions& options) {
  check_problem(problem);
  return solve_unchecked(problem, options);
}

QpSolution solve_unchecked(const QpProblem& qp, const QpOptions& options) {
  QpSolution sol;
  // Near the end the active set is usually settled; an exact re-solve on it
  // both sharpens the answer and ends iterations early, which also keeps the
  // method away from the ill-conditioned tail on degenerate optimal faces.
  bool polished = false;
  IterateHook hook;
  if (options.polish) {
    hook = [&](const Iterate& it) {
      VectorXd x, z, y;
      if (!polish(qp, it, x, z, y)) return false;
      KktResiduals pr = kkt_residuals(qp, x, z, y);
      if (pr.max() > options.tol) return false;
      sol.x = std::move(x);
      sol.mult_ineq = std::move(z);
      sol.mult_eq = std::move(y);
      sol.residuals = pr;
      polished = true;
      return true;
    };
  }
  // The interior iterate aims below tol so that the final residual check,
  // computed on x directly rather than on the slack, still passes.
  IpmOutcome res = interior_point(qp, options.tol * 0.1, options.max_iter, hook);
  sol.iterations = res.iterations;
  if (!polished) {
    sol.x = res.it.x;
    sol.mult_ineq = res.it.z;
    sol.mult_eq = res.it.y;
    sol.residuals = kkt_residuals(qp, sol.x, sol.mult_ineq, sol.mult_eq);
    if (options.polish && res.it.x.allFinite()) {
      VectorXd x, z, y;
      if (polish(qp, res.it, x, z, y)) {
        KktResiduals pr = kkt_residuals(qp, x, z, y);
        if (pr.max() < sol.residuals.max()) {
          sol.x = std::move(x);
          sol.mult_ineq = std::move(z);
          sol.mult_eq = std::move(y);
          sol.residuals = pr;
          polished = true;
        }
      }
    }
  }
  sol.polished = polished;
  sol.objective = qp.objective(sol.x);

  if (sol.residuals.max() <= options.tol) {
    sol.status = QpStatus::optimal;
    return sol;
  }
  if (auto cert = phase_one(qp, options.tol)) {
    sol.status = QpStatus::infeasible;
    sol.certificate = std::move(cert);
    return sol;
  }
  const double scale = 1.0 + std::max({inf_norm(qp.r), inf_norm(qp.b_ineq), inf_norm(qp.b_eq)});
  if (!sol.x.allFinite() || inf_norm(sol.x) > 1e8 * scale) {
    sol.status = QpStatus::unbounded;
    return sol;
  }
  sol.status = QpStatus::max_iter;
  return sol;
}

OracleResult brute_force_oracle(const QpProblem& qp, const VectorXd& lo, const VectorXd& hi,
                                 const OracleOptions& options) {
  check_problem(qp);
  const Index n = qp.num_vars();
  if (lo.size() != n || hi.size() != n) throw QpError("oracle box dimension mismatch");
  if ((lo.array() > hi.array()).any()) throw QpError("oracle box is empty");

  VectorXd x0 = VectorXd::Zero(n);
  MatrixXd basis = MatrixXd::Identity(n, n);
  if (qp.num_eq() > 0) {
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(qp.A_eq);
    x0 = cod.solve(qp.b_eq);
    if (inf_norm(qp.A_eq * x0 - qp.b_eq) > 1e-9) throw QpError("oracle: inconsistent equalities");
    Eigen::FullPivLU<MatrixXd> lu(qp.A_eq);
    MatrixXd ker = lu.kernel();
    if (lu.rank() == n) {
      basis = MatrixXd::Zero(n, 0);
    } else {
      Eigen::HouseholderQR<MatrixXd> qr(ker);
      basis = qr.householderQ() * MatrixXd::Identity(n, ker.cols());
    }
  }
  const Index k = basis.cols();
  if (k > 4) {
    std::ostringstream msg;
    msg << "oracle dimension too large: " << k << " free dimensions (max 4)";
    throw QpError(msg.str());
  }

  // Box for the null-space coordinates t = basisᵀ (x − x0).
  VectorXd t_lo(k), t_hi(k);
  for (Index j = 0; j < k; ++j) {
    double a = 0.0, b = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double c = basis(i, j);
      const double u = c * (lo[i] - x0[i]);
      const double v = c * (hi[i] - x0[i]);
      a += std::min(u, v);
      b += std::max(u, v);
    }
    t_lo[j] = a;
    t_hi[j] = b;
  }

  OracleResult best;
  best.value = std::numeric_limits<double>::infinity();
  auto feasible = [&](const VectorXd& x) {
    for (Index i = 0; i < n; ++i) {
      if (x[i] < lo[i] - options.feas_tol || x[i] > hi[i] + options.feas_tol) return false;
    }
    if (qp.num_ineq() > 0 && ((qp.A_ineq * x - qp.b_ineq).array() > options.feas_tol).any()) return false;
    return true;
  };

  const int g = std::max(options.grid, 2);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  VectorXd center = 0.5 * (t_lo + t_hi);
  VectorXd half = 0.5 * (t_hi - t_lo);
  for (int pass = 0; pass <= options.passes; ++pass) {
    long total = 1;
    for (Index j = 0; j < k; ++j) total *= g;
    VectorXd t(k);
    bool improved_any = false;
    VectorXd pass_best_t = center;
    // The lattice plus as many uniform draws; the draws reach optima at the
    // tip of acute feasible wedges that no lattice point enters.
    for (long idx = 0; idx < 2 * total; ++idx) {
      long rest = idx;
      for (Index j = 0; j < k; ++j) {
        const double lo_j = std::max(center[j] - half[j], t_lo[j]);
        const double hi_j = std::min(center[j] + half[j], t_hi[j]);
        if (idx < total) {
          const int step = static_cast<int>(rest % g);
          rest /= g;
          t[j] = lo_j + (hi_j - lo_j) * static_cast<double>(step) / static_cast<double>(g - 1);
        } else {
          t[j] = lo_j + (hi_j - lo_j) * unit(rng);
        }
      }
      VectorXd x = x0 + basis * t;
      ++best.evaluated_points;
      if (!feasible(x)) continue;
      ++best.feasible_points;
      const double v = qp.objective(x);
      if (v < best.value) {
        best.value = v;
        best.x = x;
        pass_best_t = t;
        improved_any = true;
      }
    }
    if (best.feasible_points == 0) throw QpError("oracle: no feasible grid point");
    // Shrink only once the best point sits well inside the box; otherwise
    // follow it at the same scale.
    const bool settled = ((pass_best_t - center).array().abs() <= 0.5 * half.array()).all();
    if (improved_any) center = pass_best_t;
    if (settled) half /= options.zoom;
  }
  return best;
}

}  // namespace peermarket
