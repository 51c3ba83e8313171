#include "peermarket/central_market.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

namespace peermarket {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* to_string(SolutionKind kind) {
  switch (kind) {
    case SolutionKind::centralized: return "centralized";
    case SolutionKind::variational: return "variational_equilibrium";
    case SolutionKind::parameterized: return "parameterized";
  }
  return "unknown";
}

bool MarketSolution::linked(int u, int v) const {
  const auto key = std::minmax(u, v);
  return std::find(pairs.begin(), pairs.end(), std::pair<int, int>(key.first, key.second)) != pairs.end();
}

double MarketSolution::traded_volume() const {
  double vol = 0.0;
  for (auto [u, v] : pairs) vol += std::max(std::abs(q(u, v)), std::abs(q(v, u)));
  return vol;
}

namespace {

void require_valid(const Scenario& s) {
  auto violations = validate(s);
  if (!has_errors(violations)) return;
  std::vector<std::string> blamed;
  std::ostringstream msg;
  msg << "invalid scenario '" << s.name << "':";
  for (const auto& v : violations) {
    if (v.severity != Severity::error) continue;
    msg << " [" << v.subject << ": " << v.message << "]";
    blamed.push_back(v.subject + " " + v.code);
  }
  throw MarketError(msg.str(), std::move(blamed));
}

std::string label(const Scenario& s, int i) { return std::to_string(s.prosumers[i].id); }

}  // namespace

MarketQp build_centralized_qp(const Scenario& s, const MarketTerms& terms) {
  require_valid(s);
  const Topology topo(s);
  MarketQp out;
  MarketLayout& L = out.layout;
  L.nodes = topo.nodes();
  L.arcs = static_cast<int>(topo.arcs().size());
  L.arc_list = topo.arcs();
  if (terms.arc_weight.size() != 0 && terms.arc_weight.size() != L.arcs) {
    throw MarketError("arc weight vector has wrong length");
  }
  out.terms = terms;
  const int n = L.nodes;
  const int nv = L.vars();

  QpProblem& qp = out.qp;
  qp = QpProblem::with_vars(nv);
  qp.var_names.resize(nv);
  for (int i = 0; i < n; ++i) {
    const auto& p = s.prosumers[i];
    qp.var_names[L.d_var(i)] = "D[" + label(s, i) + "]";
    qp.var_names[L.g_var(i)] = "G[" + label(s, i) + "]";
    // ã(D − D*)² − b̃ + ½aG² + bG + d
    qp.P(L.d_var(i), L.d_var(i)) = 2.0 * p.a_tilde;
    qp.r[L.d_var(i)] = -2.0 * p.a_tilde * p.d_star;
    qp.P(L.g_var(i), L.g_var(i)) = p.a;
    qp.r[L.g_var(i)] = p.b;
    qp.constant += p.a_tilde * p.d_star * p.d_star - p.b_tilde + p.d;
  }
  for (int k = 0; k < L.arcs; ++k) {
    const auto& arc = L.arc_list[k];
    const int v = L.q_var(k);
    qp.var_names[v] = "q[" + label(s, arc.from) + "][" + label(s, arc.to) + "]";
    qp.r[v] = topo.pref(arc.to, arc.from);
    if (terms.arc_weight.size() != 0) qp.r[v] += terms.arc_weight[k];
    qp.P(v, v) = 2.0 * terms.regularization;
  }

  std::vector<std::pair<VectorXd, double>> ineq;
  std::vector<std::pair<VectorXd, double>> eq;
  auto add_ineq = [&](VectorXd row, double rhs, std::string name) {
    ineq.emplace_back(std::move(row), rhs);
    L.ineq_names.push_back(std::move(name));
    return static_cast<int>(ineq.size()) - 1;
  };
  auto add_eq = [&](VectorXd row, double rhs, std::string name) {
    eq.emplace_back(std::move(row), rhs);
    L.eq_names.push_back(std::move(name));
    return static_cast<int>(eq.size()) - 1;
  };
  auto unit = [&](int var, double coef) {
    VectorXd row = VectorXd::Zero(nv);
    row[var] = coef;
    return row;
  };

  L.d_hi.assign(n, -1);
  L.d_lo.assign(n, -1);
  L.d_fix.assign(n, -1);
  L.g_hi.assign(n, -1);
  L.g_lo.assign(n, -1);
  L.g_fix.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    const auto& p = s.prosumers[i];
    const std::string id = label(s, i);
    if (p.d_min == p.d_max) {
      L.d_fix[i] = add_eq(unit(L.d_var(i), 1.0), p.d_max, "demand_fixed[" + id + "]");
    } else {
      L.d_hi[i] = add_ineq(unit(L.d_var(i), 1.0), p.d_max, "demand_max[" + id + "]");
      L.d_lo[i] = add_ineq(unit(L.d_var(i), -1.0), -p.d_min, "demand_min[" + id + "]");
    }
    if (p.g_min == p.g_max) {
      L.g_fix[i] = add_eq(unit(L.g_var(i), 1.0), p.g_max, "flex_fixed[" + id + "]");
    } else {
      L.g_hi[i] = add_ineq(unit(L.g_var(i), 1.0), p.g_max, "flex_max[" + id + "]");
      L.g_lo[i] = add_ineq(unit(L.g_var(i), -1.0), -p.g_min, "flex_min[" + id + "]");
    }
  }
  L.capacity.assign(L.arcs, -1);
  for (int k = 0; k < L.arcs; ++k) {
    const auto& arc = L.arc_list[k];
    L.capacity[k] = add_ineq(unit(L.q_var(k), 1.0), topo.capacity(arc.from, arc.to),
                             "capacity[" + label(s, arc.from) + "->" + label(s, arc.to) + "]");
  }
  L.reciprocity.assign(s.links.size(), -1);
  for (std::size_t li = 0; li < s.links.size(); ++li) {
    const int u = static_cast<int>(*s.index_of(s.links[li].n));
    const int v = static_cast<int>(*s.index_of(s.links[li].m));
    VectorXd row = VectorXd::Zero(nv);
    row[L.q_var(topo.arc(u, v))] = 1.0;
    row[L.q_var(topo.arc(v, u))] = 1.0;
    L.reciprocity[li] = add_ineq(std::move(row), 0.0, "reciprocity[" + label(s, std::min(u, v)) + "," + label(s, std::max(u, v)) + "]");
  }
  L.balance.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    VectorXd row = VectorXd::Zero(nv);
    row[L.d_var(i)] = 1.0;
    row[L.g_var(i)] = -1.0;
    for (int m : topo.neighbors(i)) row[L.q_var(topo.arc(m, i))] = -1.0;
    L.balance[i] = add_eq(std::move(row), s.prosumers[i].delta_g, "balance[" + label(s, i) + "]");
  }

  qp.A_ineq.resize(static_cast<Eigen::Index>(ineq.size()), nv);
  qp.b_ineq.resize(static_cast<Eigen::Index>(ineq.size()));
  for (std::size_t r = 0; r < ineq.size(); ++r) {
    qp.A_ineq.row(r) = ineq[r].first.transpose();
    qp.b_ineq[r] = ineq[r].second;
  }
  qp.A_eq.resize(static_cast<Eigen::Index>(eq.size()), nv);
  qp.b_eq.resize(static_cast<Eigen::Index>(eq.size()));
  for (std::size_t r = 0; r < eq.size(); ++r) {
    qp.A_eq.row(r) = eq[r].first.transpose();
    qp.b_eq[r] = eq[r].second;
  }
  return out;
}

double social_welfare(const Scenario& s, const VectorXd& D, const VectorXd& G, const MatrixXd& q) {
  const auto n = static_cast<Eigen::Index>(s.size());
  if (D.size() != n || G.size() != n || q.rows() != n || q.cols() != n) {
    throw std::invalid_argument("social_welfare: shape mismatch with scenario");
  }
  const Topology topo(s);
  double sw = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = s.prosumers[i];
    const double dev = D[i] - p.d_star;
    sw += -p.a_tilde * dev * dev + p.b_tilde - 0.5 * p.a * G[i] * G[i] - p.b * G[i] - p.d;
    for (int m : topo.neighbors(static_cast<int>(i))) sw -= topo.pref(static_cast<int>(i), m) * q(m, i);
  }
  return sw;
}

MarketSolution extract_solution(const Scenario& s, const MarketQp& mqp, const QpSolution& sol, SolutionKind kind) {
  const MarketLayout& L = mqp.layout;
  if (sol.status == QpStatus::infeasible) {
    std::vector<std::string> blamed;
    if (sol.certificate) {
      const auto& c = *sol.certificate;
      const double scale = std::max(c.y_ineq.size() ? c.y_ineq.cwiseAbs().maxCoeff() : 0.0,
                                    c.w_eq.size() ? c.w_eq.cwiseAbs().maxCoeff() : 0.0);
      for (Eigen::Index r = 0; r < c.y_ineq.size(); ++r) {
        if (std::abs(c.y_ineq[r]) > 1e-6 * scale) blamed.push_back(L.ineq_names[r]);
      }
      for (Eigen::Index r = 0; r < c.w_eq.size(); ++r) {
        if (std::abs(c.w_eq[r]) > 1e-6 * scale) blamed.push_back(L.eq_names[r]);
      }
    }
    std::ostringstream msg;
    msg << "market problem is infeasible";
    if (!blamed.empty()) {
      msg << "; conflicting constraints:";
      for (const auto& b : blamed) msg << ' ' << b;
    }
    throw MarketInfeasible(msg.str(), std::move(blamed));
  }
  if (sol.status != QpStatus::optimal) {
    throw MarketError(std::string("market solve did not converge: ") + to_string(sol.status));
  }

  const int n = L.nodes;
  const Topology topo(s);
  MarketSolution m;
  m.kind = kind;
  m.status = sol.status;
  m.iterations = sol.iterations;
  m.residuals = sol.residuals;
  m.regularization = mqp.terms.regularization;
  m.D.resize(n);
  m.G.resize(n);
  m.lambda.resize(n);
  m.mu_lo = m.mu_hi = m.nu_lo = m.nu_hi = VectorXd::Zero(n);
  m.q = m.zeta = m.xi = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    m.D[i] = sol.x[L.d_var(i)];
    m.G[i] = sol.x[L.g_var(i)];
    m.lambda[i] = sol.mult_eq[L.balance[i]];
    if (L.d_fix[i] >= 0) {
      const double y = sol.mult_eq[L.d_fix[i]];
      m.mu_hi[i] = std::max(y, 0.0);
      m.mu_lo[i] = std::max(-y, 0.0);
    } else {
      m.mu_hi[i] = sol.mult_ineq[L.d_hi[i]];
      m.mu_lo[i] = sol.mult_ineq[L.d_lo[i]];
    }
    if (L.g_fix[i] >= 0) {
      const double y = sol.mult_eq[L.g_fix[i]];
      m.nu_hi[i] = std::max(y, 0.0);
      m.nu_lo[i] = std::max(-y, 0.0);
    } else {
      m.nu_hi[i] = sol.mult_ineq[L.g_hi[i]];
      m.nu_lo[i] = sol.mult_ineq[L.g_lo[i]];
    }
  }
  for (int k = 0; k < L.arcs; ++k) {
    const auto& arc = L.arc_list[k];
    m.q(arc.from, arc.to) = sol.x[L.q_var(k)];
    m.xi(arc.to, arc.from) = sol.mult_ineq[L.capacity[k]];
  }
  for (std::size_t li = 0; li < s.links.size(); ++li) {
    const int u = static_cast<int>(*s.index_of(s.links[li].n));
    const int v = static_cast<int>(*s.index_of(s.links[li].m));
    m.zeta(u, v) = m.zeta(v, u) = sol.mult_ineq[L.reciprocity[li]];
    m.pairs.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(m.pairs.begin(), m.pairs.end());
  m.Q = m.q.colwise().sum().transpose();
  m.sw = social_welfare(s, m.D, m.G, m.q);

  for (auto [u, v] : m.pairs) {
    const double w = -(m.q(u, v) + m.q(v, u));
    if (w > 0) m.total_waste += w;
    if (w > kWasteReportThreshold) {
      m.waste.push_back({u, v, w, m.lambda[u], m.lambda[v], topo.pref(u, v), topo.pref(v, u)});
    }
  }

  // Per-agent stationarity and the per-arc price identity. Arc weights are
  // part of the identity; a Tikhonov term shows up as 2·reg·|q|.
  double dev = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& p = s.prosumers[i];
    dev = std::max(dev, std::abs(2.0 * p.a_tilde * (m.D[i] - p.d_star) - m.mu_lo[i] + m.mu_hi[i] + m.lambda[i]));
    dev = std::max(dev, std::abs(p.a * m.G[i] + p.b - m.nu_lo[i] + m.nu_hi[i] - m.lambda[i]));
    dev = std::max(dev, std::abs(m.D[i] - m.G[i] - p.delta_g - m.Q[i]));
  }
  for (int k = 0; k < L.arcs; ++k) {
    const auto& arc = L.arc_list[k];
    const int buyer = arc.to;
    const int seller = arc.from;
    const double w = mqp.terms.arc_weight.size() ? mqp.terms.arc_weight[k] : 0.0;
    dev = std::max(dev, std::abs(topo.pref(buyer, seller) + w + m.xi(buyer, seller) + m.zeta(buyer, seller) - m.lambda[buyer]));
  }
  m.identity_residual = dev;
  return m;
}

MarketSolution solve_centralized(const Scenario& s, const MarketOptions& options) {
  MarketQp mqp = build_centralized_qp(s, {options.regularization, {}});
  QpSolution sol = solve(mqp.qp, options.qp);
  return extract_solution(s, mqp, sol, SolutionKind::centralized);
}

ClosedFormPrices nodal_price_closed_form(const Scenario& s, const MarketSolution& sol, double waste_tol) {
  if (sol.total_waste > waste_tol) {
    std::ostringstream msg;
    msg << "waste present (total " << sol.total_waste << "); the closed form assumes zero aggregate net import";
    throw MarketError(msg.str());
  }
  const Topology topo(s);
  const int n = topo.nodes();
  const int root = topo.root();
  // offset[i] = λ_i − λ_root accumulated along BFS tree edges via
  // λ_v − λ_u = c_vu − c_uv + ξ_vu − ξ_uv.
  VectorXd offset = VectorXd::Zero(n);
  std::vector<bool> seen(n, false);
  std::queue<int> frontier;
  frontier.push(root);
  seen[root] = true;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : topo.neighbors(u)) {
      if (seen[v]) continue;
      seen[v] = true;
      offset[v] = offset[u] + topo.pref(v, u) - topo.pref(u, v) + sol.xi(v, u) - sol.xi(u, v);
      frontier.push(v);
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw MarketError("closed-form prices need every node connected to the root");
  }
  double weight = 0.0;
  double rhs = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& p = s.prosumers[i];
    const double alpha = 1.0 / (2.0 * p.a_tilde) + 1.0 / p.a;
    weight += alpha;
    rhs += p.d_star - (sol.mu_hi[i] - sol.mu_lo[i]) / (2.0 * p.a_tilde) + p.b / p.a +
           (sol.nu_hi[i] - sol.nu_lo[i]) / p.a - p.delta_g;
    rhs -= alpha * offset[i];
  }
  ClosedFormPrices out;
  out.root = rhs / weight;
  out.lambda = offset.array() + out.root;
  out.deviation = (out.lambda - sol.lambda).lpNorm<Eigen::Infinity>();
  return out;
}

}  // namespace peermarket
