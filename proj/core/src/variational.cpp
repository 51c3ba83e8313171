#include <Eigen/QR>

#include <algorithm>
#include <cmath>

#include "peermarket/equilibrium.hpp"

namespace peermarket {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Joint KKT system of all agents' problems with one shared multiplier per
// trade-reciprocity constraint. Unknowns, in order:
//   D, G (N each), q (per arc), λ (N), μ̲, μ̄, ν̲, ν̄ (N each), ξ (per arc), ζ (per link).
// Complementarity pairs are written with the Fischer-Burmeister function
// φ(a, b) = √(a² + b²) − a − b, which vanishes iff a, b ≥ 0 and ab = 0.
class GameKkt {
 public:
  GameKkt(const Scenario& s, double reg) : s_(s), topo_(s), reg_(reg) {
    n_ = topo_.nodes();
    arcs_ = static_cast<int>(topo_.arcs().size());
    links_ = static_cast<int>(s.links.size());
    for (const auto& l : s.links) {
      link_ends_.emplace_back(static_cast<int>(*s.index_of(l.n)), static_cast<int>(*s.index_of(l.m)));
    }
  }

  [[nodiscard]] int size() const { return 8 * n_ + 2 * arcs_ + links_; }
  [[nodiscard]] int D(int i) const { return i; }
  [[nodiscard]] int G(int i) const { return n_ + i; }
  [[nodiscard]] int q(int k) const { return 2 * n_ + k; }
  [[nodiscard]] int lambda(int i) const { return 2 * n_ + arcs_ + i; }
  [[nodiscard]] int mu_lo(int i) const { return 3 * n_ + arcs_ + i; }
  [[nodiscard]] int mu_hi(int i) const { return 4 * n_ + arcs_ + i; }
  [[nodiscard]] int nu_lo(int i) const { return 5 * n_ + arcs_ + i; }
  [[nodiscard]] int nu_hi(int i) const { return 6 * n_ + arcs_ + i; }
  [[nodiscard]] int xi(int k) const { return 7 * n_ + arcs_ + k; }
  [[nodiscard]] int zeta(int l) const { return 7 * n_ + 2 * arcs_ + l; }

  [[nodiscard]] VectorXd start() const {
    VectorXd z = VectorXd::Zero(size());
    for (int i = 0; i < n_; ++i) {
      const auto& p = s_.prosumers[i];
      z[D(i)] = std::clamp(p.d_star, p.d_min, p.d_max);
      z[G(i)] = 0.5 * (p.g_min + p.g_max);
      z[mu_lo(i)] = z[mu_hi(i)] = z[nu_lo(i)] = z[nu_hi(i)] = 1.0;
    }
    for (int k = 0; k < arcs_; ++k) z[xi(k)] = 1.0;
    for (int l = 0; l < links_; ++l) z[zeta(l)] = 1.0;
    return z;
  }

  // F(z) and one element of its generalized Jacobian.
  void evaluate(const VectorXd& z, VectorXd& F, MatrixXd& J) const {
    F.setZero(size());
    J.setZero(size(), size());
    int row = 0;
    for (int i = 0; i < n_; ++i) {
      const auto& p = s_.prosumers[i];
      // ∂/∂D of agent i's Lagrangian
      F[row] = 2.0 * p.a_tilde * (z[D(i)] - p.d_star) - z[mu_lo(i)] + z[mu_hi(i)] + z[lambda(i)];
      J(row, D(i)) = 2.0 * p.a_tilde;
      J(row, mu_lo(i)) = -1.0;
      J(row, mu_hi(i)) = 1.0;
      J(row, lambda(i)) = 1.0;
      ++row;
      F[row] = p.a * z[G(i)] + p.b - z[nu_lo(i)] + z[nu_hi(i)] - z[lambda(i)];
      J(row, G(i)) = p.a;
      J(row, nu_lo(i)) = -1.0;
      J(row, nu_hi(i)) = 1.0;
      J(row, lambda(i)) = -1.0;
      ++row;
    }
    for (int k = 0; k < arcs_; ++k) {
      const auto& a = topo_.arcs()[k];
      const int l = static_cast<int>(a.link);
      F[row] = topo_.pref(a.to, a.from) + 2.0 * reg_ * z[q(k)] + z[xi(k)] + z[zeta(l)] - z[lambda(a.to)];
      J(row, q(k)) = 2.0 * reg_;
      J(row, xi(k)) = 1.0;
      J(row, zeta(l)) = 1.0;
      J(row, lambda(a.to)) = -1.0;
      ++row;
    }
    for (int i = 0; i < n_; ++i) {
      const auto& p = s_.prosumers[i];
      F[row] = z[D(i)] - z[G(i)] - p.delta_g;
      J(row, D(i)) = 1.0;
      J(row, G(i)) = -1.0;
      for (int m : topo_.neighbors(i)) {
        const int k = topo_.arc(m, i);
        F[row] -= z[q(k)];
        J(row, q(k)) = -1.0;
      }
      ++row;
    }
    auto pair = [&](int mult, double slack, const std::vector<std::pair<int, double>>& slack_grad) {
      const double a = z[mult];
      const double b = slack;
      const double r = std::hypot(a, b);
      double da = -1.0 + 1.0 / std::sqrt(2.0);
      double db = da;
      if (r > 1e-14) {
        da = a / r - 1.0;
        db = b / r - 1.0;
      }
      F[row] = r - a - b;
      J(row, mult) += da;
      for (auto [var, g] : slack_grad) J(row, var) += db * g;
      ++row;
    };
    for (int i = 0; i < n_; ++i) {
      const auto& p = s_.prosumers[i];
      pair(mu_lo(i), z[D(i)] - p.d_min, {{D(i), 1.0}});
      pair(mu_hi(i), p.d_max - z[D(i)], {{D(i), -1.0}});
      pair(nu_lo(i), z[G(i)] - p.g_min, {{G(i), 1.0}});
      pair(nu_hi(i), p.g_max - z[G(i)], {{G(i), -1.0}});
    }
    for (int k = 0; k < arcs_; ++k) {
      const auto& a = topo_.arcs()[k];
      pair(xi(k), topo_.capacity(a.from, a.to) - z[q(k)], {{q(k), -1.0}});
    }
    for (int l = 0; l < links_; ++l) {
      const auto [u, v] = link_ends_[l];
      const int kuv = topo_.arc(u, v);
      const int kvu = topo_.arc(v, u);
      pair(zeta(l), -(z[q(kuv)] + z[q(kvu)]), {{q(kuv), -1.0}, {q(kvu), -1.0}});
    }
  }

  [[nodiscard]] int nodes() const { return n_; }
  [[nodiscard]] int arcs() const { return arcs_; }
  [[nodiscard]] int links() const { return links_; }

 private:
  const Scenario& s_;
  Topology topo_;
  double reg_ = 0.0;
  int n_ = 0;
  int arcs_ = 0;
  int links_ = 0;
  std::vector<std::pair<int, int>> link_ends_;
};

struct NewtonResult {
  VectorXd z;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

NewtonResult semismooth_newton(const GameKkt& sys, double tol, int max_iter) {
  NewtonResult out;
  VectorXd z = sys.start();
  VectorXd F;
  MatrixXd J;
  sys.evaluate(z, F, J);
  double merit = 0.5 * F.squaredNorm();
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it;
    if (F.lpNorm<Eigen::Infinity>() <= tol) {
      out.converged = true;
      break;
    }
    const VectorXd grad = J.transpose() * F;
    // Minimum-norm step copes with non-unique trades and multipliers.
    VectorXd d = J.completeOrthogonalDecomposition().solve(-F);
    if (!d.allFinite() || grad.dot(d) > -1e-12 * std::pow(d.norm(), 2.1)) d = -grad;
    double t = 1.0;
    VectorXd trial;
    VectorXd Ft;
    MatrixXd Jt;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      trial = z + t * d;
      sys.evaluate(trial, Ft, Jt);
      const double m = 0.5 * Ft.squaredNorm();
      if (m <= merit + 1e-4 * t * grad.dot(d)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    z = std::move(trial);
    F = std::move(Ft);
    J = std::move(Jt);
    merit = 0.5 * F.squaredNorm();
  }
  out.z = std::move(z);
  out.residual = F.lpNorm<Eigen::Infinity>();
  if (out.residual <= tol) out.converged = true;
  return out;
}

}  // namespace

MarketSolution solve_ve(const Scenario& s, const MarketOptions& options) {
  MarketQp mqp = build_centralized_qp(s, {options.regularization, {}});
  const GameKkt sys(s, options.regularization);
  double scale = 1.0;
  for (const auto& p : s.prosumers) {
    scale = std::max({scale, std::abs(p.b), 2.0 * p.a_tilde * std::abs(p.d_star), std::abs(p.delta_g)});
  }
  for (const auto& l : s.links) scale = std::max({scale, l.c_nm, l.c_mn, l.kappa});
  const NewtonResult nr = semismooth_newton(sys, 1e-2 * options.qp.tol * scale, std::max(200, 2 * options.qp.max_iter));
  if (!nr.converged) {
    const QpSolution probe = solve(mqp.qp, options.qp);
    if (probe.status == QpStatus::infeasible) throw MarketInfeasible("market problem is infeasible");
    throw MarketError("variational equilibrium: complementarity solve stalled at residual " +
                      std::to_string(nr.residual));
  }

  // Hand the point over in the centralized layout for reporting.
  const MarketLayout& L = mqp.layout;
  const VectorXd& z = nr.z;
  QpSolution sol;
  sol.status = QpStatus::optimal;
  sol.iterations = nr.iterations;
  sol.x.resize(L.vars());
  sol.mult_ineq = VectorXd::Zero(mqp.qp.num_ineq());
  sol.mult_eq = VectorXd::Zero(mqp.qp.num_eq());
  for (int i = 0; i < L.nodes; ++i) {
    sol.x[L.d_var(i)] = z[sys.D(i)];
    sol.x[L.g_var(i)] = z[sys.G(i)];
    sol.mult_eq[L.balance[i]] = z[sys.lambda(i)];
    if (L.d_fix[i] >= 0) {
      sol.mult_eq[L.d_fix[i]] = z[sys.mu_hi(i)] - z[sys.mu_lo(i)];
    } else {
      sol.mult_ineq[L.d_hi[i]] = z[sys.mu_hi(i)];
      sol.mult_ineq[L.d_lo[i]] = z[sys.mu_lo(i)];
    }
    if (L.g_fix[i] >= 0) {
      sol.mult_eq[L.g_fix[i]] = z[sys.nu_hi(i)] - z[sys.nu_lo(i)];
    } else {
      sol.mult_ineq[L.g_hi[i]] = z[sys.nu_hi(i)];
      sol.mult_ineq[L.g_lo[i]] = z[sys.nu_lo(i)];
    }
  }
  for (int k = 0; k < L.arcs; ++k) {
    sol.x[L.q_var(k)] = z[sys.q(k)];
    sol.mult_ineq[L.capacity[k]] = z[sys.xi(k)];
  }
  for (int l = 0; l < sys.links(); ++l) sol.mult_ineq[L.reciprocity[l]] = z[sys.zeta(l)];
  sol.objective = mqp.qp.objective(sol.x);
  sol.residuals = kkt_residuals(mqp.qp, sol.x, sol.mult_ineq, sol.mult_eq);
  return extract_solution(s, mqp, sol, SolutionKind::variational);
}

}  // namespace peermarket
