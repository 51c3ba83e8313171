#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "peermarket/qp.hpp"
#include "peermarket/scenario.hpp"

namespace peermarket::oracle {

// Exact optimum of a small strictly convex QP by enumerating active sets.
struct ExactQp {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
};

inline std::optional<ExactQp> active_set_oracle(const QpProblem& qp) {
  const Eigen::Index n = qp.num_vars();
  const Eigen::Index mi = qp.num_ineq();
  const Eigen::Index me = qp.num_eq();
  std::optional<ExactQp> best;
  for (long mask = 0; mask < (1L << mi); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < mi; ++i) {
      if (mask & (1L << i)) act.push_back(i);
    }
    const Eigen::Index k = me + static_cast<Eigen::Index>(act.size());
    if (k > n) continue;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    K.topLeftCorner(n, n) = qp.P;
    rhs.head(n) = -qp.r;
    for (Eigen::Index j = 0; j < me; ++j) {
      K.block(0, n + j, n, 1) = qp.A_eq.row(j).transpose();
      K.block(n + j, 0, 1, n) = qp.A_eq.row(j);
      rhs[n + j] = qp.b_eq[j];
    }
    for (std::size_t j = 0; j < act.size(); ++j) {
      const Eigen::Index c = n + me + static_cast<Eigen::Index>(j);
      K.block(0, c, n, 1) = qp.A_ineq.row(act[j]).transpose();
      K.block(c, 0, 1, n) = qp.A_ineq.row(act[j]);
      rhs[c] = qp.b_ineq[act[j]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.rank() < n + k) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    bool ok = true;
    for (std::size_t j = 0; j < act.size(); ++j) ok = ok && sol[n + me + static_cast<Eigen::Index>(j)] >= -1e-9;
    if (mi > 0) ok = ok && ((qp.A_ineq * x - qp.b_ineq).array() <= 1e-9).all();
    if (!ok) continue;
    const double v = qp.objective(x);
    if (!best || v < best->value) best = ExactQp{x, v};
  }
  return best;
}

// Random strictly convex QP in ≤ 3 variables inside the box [−5, 5]ⁿ plus
// a few random cuts that keep the origin feasible, optionally one equality
// through the origin.
inline QpProblem random_small_qp(std::mt19937_64& rng, int n, bool with_equality) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  QpProblem qp = QpProblem::with_vars(n);
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) M(i, j) = u(rng);
  }
  qp.P = M * M.transpose() + 0.2 * Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) qp.r[i] = 4.0 * u(rng);
  const int cuts = 2;
  qp.A_ineq = Eigen::MatrixXd::Zero(2 * n + cuts, n);
  qp.b_ineq = Eigen::VectorXd::Zero(2 * n + cuts);
  for (int i = 0; i < n; ++i) {
    qp.A_ineq(2 * i, i) = 1.0;
    qp.b_ineq[2 * i] = 5.0;
    qp.A_ineq(2 * i + 1, i) = -1.0;
    qp.b_ineq[2 * i + 1] = 5.0;
  }
  for (int c = 0; c < cuts; ++c) {
    for (int i = 0; i < n; ++i) qp.A_ineq(2 * n + c, i) = u(rng);
    qp.b_ineq[2 * n + c] = 0.5 + std::abs(u(rng));
  }
  if (with_equality && n > 1) {
    qp.A_eq = Eigen::MatrixXd::Zero(1, n);
    for (int i = 0; i < n; ++i) qp.A_eq(0, i) = u(rng);
    qp.b_eq = Eigen::VectorXd::Zero(1);
  }
  return qp;
}

// Welfare written out term by term from the prosumer payoffs: usage benefit
// minus flexibility cost minus preference cost of every import.
inline double welfare_by_hand(const Scenario& s, const Eigen::VectorXd& D, const Eigen::VectorXd& G,
                              const Eigen::MatrixXd& q) {
  double sw = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& p = s.prosumers[i];
    const auto k = static_cast<Eigen::Index>(i);
    const double dev = D[k] - p.d_star;
    sw += -p.a_tilde * dev * dev + p.b_tilde;
    sw -= 0.5 * p.a * G[k] * G[k] + p.b * G[k] + p.d;
  }
  for (const auto& l : s.links) {
    const auto n = static_cast<Eigen::Index>(*s.index_of(l.n));
    const auto m = static_cast<Eigen::Index>(*s.index_of(l.m));
    sw -= l.c_nm * q(m, n);  // n buys from m
    sw -= l.c_mn * q(n, m);
  }
  return sw;
}

// The low-welfare equilibrium drawn for the three-node network:
// D = (5.9, 0, 2.1), no flexibility, 0→1: 2, 1→2: 5, 2→0: 7.9.
struct PublishedPoint {
  Eigen::VectorXd D, G;
  Eigen::MatrixXd q;
};

inline PublishedPoint published_low_equilibrium() {
  PublishedPoint p;
  p.D = Eigen::Vector3d(5.9, 0.0, 2.1);
  p.G = Eigen::Vector3d::Zero();
  p.q = Eigen::MatrixXd::Zero(3, 3);
  auto set = [&](int seller, int buyer, double v) {
    p.q(seller, buyer) = v;
    p.q(buyer, seller) = -v;
  };
  set(0, 1, 2.0);
  set(1, 2, 5.0);
  set(2, 0, 7.9);
  return p;
}

}  // namespace peermarket::oracle
